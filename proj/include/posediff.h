/* C API for the posediff library. All heavy state lives behind the opaque
 * context handle; functions return 0 on success or a nonzero error code and
 * leave a message retrievable via pd_last_error. */
#ifndef POSEDIFF_H
#define POSEDIFF_H

#ifdef __cplusplus
extern "C" {
#endif

#define PD_OK 0
#define PD_ERR_CONFIG 2
#define PD_ERR_DATA 3
#define PD_ERR_NUMERIC 4

typedef struct pd_context pd_context;

pd_context* pd_context_new(void);
void pd_context_free(pd_context* ctx);

/* Message for the most recent failed call; empty string if none. The pointer
 * stays valid until the next call on the same context. */
const char* pd_last_error(const pd_context* ctx);

/* config_json: the merged run configuration document (see README). */
int pd_synth(pd_context* ctx, const char* config_json, const char* out_dir);

int pd_train(pd_context* ctx, const char* config_json,
             const char* dataset_dir, const char* out_dir);

/* use_ggs: nonzero enables geometry-guided sampling. */
int pd_sample(pd_context* ctx, const char* config_json,
              const char* checkpoint_path, const char* dataset_dir,
              int scene_index, int use_ggs, const char* out_dir);

int pd_eval(pd_context* ctx, const char* config_json,
            const char* pred_cameras_json, const char* gt_cameras_json,
            const char* out_dir);

/* labels/csv_paths: n parallel entries; labels appear in the figures. */
int pd_plot(pd_context* ctx, const char* config_json,
            const char* const* labels, const char* const* csv_paths, int n,
            const char* out_dir);

/* Total robust Sampson error of the camera file over all pairs in the
 * correspondence file; written to *out_total. */
int pd_sampson_error(pd_context* ctx, const char* cameras_json_path,
                     const char* pairs_json_path, double epsilon,
                     double* out_total);

#ifdef __cplusplus
}
#endif

#endif /* POSEDIFF_H */
