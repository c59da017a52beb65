#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gbe {

using ByteMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Predictions for N images over a label set. Column j of `scores` and
// `truth` refers to class label_ids[j].
struct ScoreMatrix {
  Eigen::MatrixXd scores;
  std::vector<int> label_ids;
  ByteMatrix truth;

  void validate() const;
};

struct Prf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// Micro-averaged top-k precision / recall / F1. Ties in score go to the
// lower column; images with no ground-truth labels are skipped.
Prf topk_prf(const ScoreMatrix& m, int k);

// Non-interpolated AP of one class over images, ranking by descending score
// with ties to the lower image index. nullopt when there is no positive.
std::optional<double> average_precision(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                        const Eigen::Ref<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>>& truth);

struct MeanAp {
  double value = 0;
  int evaluated = 0;
  int excluded = 0;  // classes with no positive image
};

// Unweighted mean AP over the given columns (all columns when empty).
MeanAp mean_ap(const ScoreMatrix& m, const std::vector<int>& columns = {});

struct ReportRow {
  std::string protocol;
  int k = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double map = 0;
};

// CSV with header protocol,k,precision,recall,f1,map plus a JSON mirror.
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& csv, const std::filesystem::path& json);
std::string report_csv(const std::vector<ReportRow>& rows);

}  // namespace gbe
