#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "posediff/denoiser.hpp"
#include "posediff/diffusion.hpp"

namespace posediff {

// Geodesic angle between two rotations, in degrees.
double are_degrees(const Eigen::Matrix3d& R, const Eigen::Matrix3d& R_star);

struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

struct AlignResult {
  PoseTuple aligned;
  Similarity similarity;
  double residual = 0.0;  // sum of squared center distances after alignment
  bool degenerate = false;
};

// Least-squares similarity over optical centers c = -R^T t, applied to all
// predicted extrinsics. Degenerate center configurations are flagged and
// left unaligned.
AlignResult similarity_align(const PoseTuple& pred, const PoseTuple& gt);

// Per-frame center distances; call on similarity-aligned predictions.
std::vector<double> ate(const PoseTuple& pred_aligned, const PoseTuple& gt);

// Per ordered pair (i != j) relative rotation errors, degrees.
std::vector<double> rre(const PoseTuple& pred, const PoseTuple& gt);

struct RteResult {
  std::vector<double> degrees;  // per usable ordered pair
  int excluded = 0;             // pairs with zero-norm relative translation
};

// Angle between predicted and ground-truth camera-i-to-camera-j directions.
RteResult rte(const PoseTuple& pred, const PoseTuple& gt);

struct MetricThresholds {
  std::vector<double> rotation_deg = {5.0, 10.0, 15.0, 30.0};
  std::vector<double> ate_scale_fractions = {0.1, 0.25, 0.5, 1.0};
};

// Reference length for the ATE thresholds: RMS distance of the ground-truth
// optical centers from their centroid.
double scene_scale(const PoseTuple& gt);

struct MetricReport {
  std::vector<double> are_at, ate_at, rre_at, rte_at;  // accuracies per tau
  double m_are = 0.0, m_ate = 0.0, m_rre = 0.0, m_rte = 0.0;
  std::vector<double> raw_are, raw_ate, raw_rre, raw_rte;
  int rte_excluded = 0;
  bool alignment_degenerate = false;
};

MetricReport compute_metrics(const PoseTuple& pred, const PoseTuple& gt,
                             const MetricThresholds& thresholds = {});

// Mean of per-scene threshold accuracies.
MetricReport aggregate_reports(const std::vector<MetricReport>& reports,
                               const MetricThresholds& thresholds = {});

void save_report_json(const std::string& path, const MetricReport& report,
                      const MetricThresholds& thresholds);
// One row per metric per threshold: scene,metric,threshold,accuracy.
void save_reports_csv(const std::string& path,
                      const std::vector<MetricReport>& reports,
                      const MetricThresholds& thresholds);

}  // namespace posediff
