#include "posediff/evalkit.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

using json = nlohmann::json;

double are_degrees(const Eigen::Matrix3d& R, const Eigen::Matrix3d& R_star) {
  Eigen::Matrix3d rel = R_star * R.transpose();
  double cos_t = (rel.trace() - 1.0) / 2.0;
  Eigen::Vector3d axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
                       rel(1, 0) - rel(0, 1));
  double sin_t = 0.5 * axis.norm();
  return std::atan2(sin_t, cos_t) * 180.0 / M_PI;
}

namespace {

void checkSameSize(const PoseTuple& a, const PoseTuple& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw DataError("pose tuples must have the same nonzero frame count");
  }
}

Eigen::Matrix3Xd centers(const PoseTuple& tuple) {
  Eigen::Matrix3Xd c(3, tuple.size());
  for (int i = 0; i < tuple.size(); ++i) {
    c.col(i) = tuple.cameras[i].extrinsics.center();
  }
  return c;
}

}  // namespace

AlignResult similarity_align(const PoseTuple& pred, const PoseTuple& gt) {
  checkSameSize(pred, gt);
  AlignResult res;
  res.aligned = pred;

  Eigen::Matrix3Xd src = centers(pred);
  Eigen::Matrix3Xd dst = centers(gt);
  Eigen::Vector3d src_mean = src.rowwise().mean();
  double spread = (src.colwise() - src_mean).norm();
  if (pred.size() < 2 || spread < 1e-12) {
    res.degenerate = true;
    res.residual = (src - dst).squaredNorm();
    return res;
  }

  Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
  Eigen::Matrix3d M = T.topLeftCorner<3, 3>();
  double scale = std::cbrt(M.determinant());
  res.similarity.scale = scale;
  res.similarity.rotation = M / scale;
  res.similarity.translation = T.topRightCorner<3, 1>();

  for (auto& cam : res.aligned.cameras) {
    Eigen::Matrix3d R = cam.extrinsics.rotation.toRotationMatrix();
    Eigen::Vector3d c = cam.extrinsics.center();
    Eigen::Matrix3d R_new = R * res.similarity.rotation.transpose();
    Eigen::Vector3d c_new = res.similarity.apply(c);
    cam.extrinsics.rotation = Quaternion::fromRotationMatrix(R_new);
    cam.extrinsics.translation = -(R_new * c_new);
  }
  res.residual = (centers(res.aligned) - dst).squaredNorm();
  return res;
}

std::vector<double> ate(const PoseTuple& pred_aligned, const PoseTuple& gt) {
  checkSameSize(pred_aligned, gt);
  std::vector<double> out;
  for (int i = 0; i < gt.size(); ++i) {
    out.push_back((pred_aligned.cameras[i].extrinsics.center() -
                   gt.cameras[i].extrinsics.center())
                      .norm());
  }
  return out;
}

std::vector<double> rre(const PoseTuple& pred, const PoseTuple& gt) {
  checkSameSize(pred, gt);
  std::vector<double> out;
  for (int i = 0; i < pred.size(); ++i) {
    for (int j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      Eigen::Matrix3d ri = pred.cameras[i].extrinsics.rotation.toRotationMatrix();
      Eigen::Matrix3d rj = pred.cameras[j].extrinsics.rotation.toRotationMatrix();
      Eigen::Matrix3d gi = gt.cameras[i].extrinsics.rotation.toRotationMatrix();
      Eigen::Matrix3d gj = gt.cameras[j].extrinsics.rotation.toRotationMatrix();
      out.push_back(are_degrees(ri * rj.transpose(), gi * gj.transpose()));
    }
  }
  return out;
}

RteResult rte(const PoseTuple& pred, const PoseTuple& gt) {
  checkSameSize(pred, gt);
  RteResult res;
  for (int i = 0; i < pred.size(); ++i) {
    for (int j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      // directions expressed in camera i's frame: invariant to any global
      // similarity applied to the whole tuple
      Eigen::Vector3d tp =
          pred.cameras[i].extrinsics.rotation.toRotationMatrix() *
          (pred.cameras[j].extrinsics.center() -
           pred.cameras[i].extrinsics.center());
      Eigen::Vector3d tg =
          gt.cameras[i].extrinsics.rotation.toRotationMatrix() *
          (gt.cameras[j].extrinsics.center() -
           gt.cameras[i].extrinsics.center());
      double np = tp.norm(), ng = tg.norm();
      if (np < 1e-12 || ng < 1e-12) {
        ++res.excluded;
        continue;
      }
      double c = tp.dot(tg) / (np * ng);
      c = std::clamp(c, -1.0, 1.0);
      res.degrees.push_back(std::acos(c) * 180.0 / M_PI);
    }
  }
  return res;
}

double scene_scale(const PoseTuple& gt) {
  Eigen::Matrix3Xd c = centers(gt);
  Eigen::Vector3d mean = c.rowwise().mean();
  return std::sqrt((c.colwise() - mean).squaredNorm() / gt.size());
}

namespace {

std::vector<double> accuracies(const std::vector<double>& errors,
                               const std::vector<double>& thresholds) {
  std::vector<double> acc;
  for (double tau : thresholds) {
    if (errors.empty()) {
      acc.push_back(0.0);
      continue;
    }
    int hits = 0;
    for (double e : errors) {
      if (e < tau) ++hits;
    }
    acc.push_back(static_cast<double>(hits) / errors.size());
  }
  return acc;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

}  // namespace

MetricReport compute_metrics(const PoseTuple& pred, const PoseTuple& gt,
                             const MetricThresholds& thresholds) {
  MetricReport rep;
  AlignResult aligned = similarity_align(pred, gt);
  rep.alignment_degenerate = aligned.degenerate;

  for (int i = 0; i < pred.size(); ++i) {
    rep.raw_are.push_back(
        are_degrees(pred.cameras[i].extrinsics.rotation.toRotationMatrix(),
                    gt.cameras[i].extrinsics.rotation.toRotationMatrix()));
  }
  rep.raw_ate = ate(aligned.aligned, gt);
  rep.raw_rre = rre(pred, gt);
  RteResult r = rte(pred, gt);
  rep.raw_rte = r.degrees;
  rep.rte_excluded = r.excluded;

  double scale = scene_scale(gt);
  std::vector<double> ate_taus;
  for (double f : thresholds.ate_scale_fractions) ate_taus.push_back(f * scale);

  rep.are_at = accuracies(rep.raw_are, thresholds.rotation_deg);
  rep.ate_at = accuracies(rep.raw_ate, ate_taus);
  rep.rre_at = accuracies(rep.raw_rre, thresholds.rotation_deg);
  rep.rte_at = accuracies(rep.raw_rte, thresholds.rotation_deg);
  rep.m_are = mean(rep.are_at);
  rep.m_ate = mean(rep.ate_at);
  rep.m_rre = mean(rep.rre_at);
  rep.m_rte = mean(rep.rte_at);
  return rep;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports,
                               const MetricThresholds& thresholds) {
  MetricReport agg;
  agg.are_at.assign(thresholds.rotation_deg.size(), 0.0);
  agg.ate_at.assign(thresholds.ate_scale_fractions.size(), 0.0);
  agg.rre_at.assign(thresholds.rotation_deg.size(), 0.0);
  agg.rte_at.assign(thresholds.rotation_deg.size(), 0.0);
  if (reports.empty()) return agg;
  for (const auto& rep : reports) {
    for (std::size_t k = 0; k < agg.are_at.size(); ++k) {
      agg.are_at[k] += rep.are_at[k];
      agg.rre_at[k] += rep.rre_at[k];
      agg.rte_at[k] += rep.rte_at[k];
    }
    for (std::size_t k = 0; k < agg.ate_at.size(); ++k) {
      agg.ate_at[k] += rep.ate_at[k];
    }
    agg.rte_excluded += rep.rte_excluded;
  }
  double inv = 1.0 / reports.size();
  for (auto* v : {&agg.are_at, &agg.ate_at, &agg.rre_at, &agg.rte_at}) {
    for (auto& x : *v) x *= inv;
  }
  agg.m_are = mean(agg.are_at);
  agg.m_ate = mean(agg.ate_at);
  agg.m_rre = mean(agg.rre_at);
  agg.m_rte = mean(agg.rte_at);
  return agg;
}

namespace {

json reportToJson(const MetricReport& rep, const MetricThresholds& th) {
  return {{"thresholds_deg", th.rotation_deg},
          {"ate_scale_fractions", th.ate_scale_fractions},
          {"ARE_at", rep.are_at},
          {"ATE_at", rep.ate_at},
          {"RRE_at", rep.rre_at},
          {"RTE_at", rep.rte_at},
          {"mARE", rep.m_are},
          {"mATE", rep.m_ate},
          {"mRRE", rep.m_rre},
          {"mRTE", rep.m_rte},
          {"raw_ARE", rep.raw_are},
          {"raw_ATE", rep.raw_ate},
          {"raw_RRE", rep.raw_rre},
          {"raw_RTE", rep.raw_rte},
          {"rte_excluded_pairs", rep.rte_excluded},
          {"alignment_degenerate", rep.alignment_degenerate}};
}

}  // namespace

void save_report_json(const std::string& path, const MetricReport& report,
                      const MetricThresholds& thresholds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << reportToJson(report, thresholds).dump(2) << "\n";
}

void save_reports_csv(const std::string& path,
                      const std::vector<MetricReport>& reports,
                      const MetricThresholds& thresholds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report CSV: " + path);
  out << "scene,metric,threshold,accuracy\n";
  char buf[128];
  for (std::size_t s = 0; s < reports.size(); ++s) {
    const auto& rep = reports[s];
    auto emit = [&](const char* metric, const std::vector<double>& taus,
                    const std::vector<double>& acc) {
      for (std::size_t k = 0; k < taus.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g\n", s, metric,
                      taus[k], acc[k]);
        out << buf;
      }
    };
    emit("ARE", thresholds.rotation_deg, rep.are_at);
    emit("ATE", thresholds.ate_scale_fractions, rep.ate_at);
    emit("RRE", thresholds.rotation_deg, rep.rre_at);
    emit("RTE", thresholds.rotation_deg, rep.rte_at);
  }
}

}  // namespace posediff
