#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dctm {

/// K x K counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t k) const;
  std::uint64_t col_sum(std::size_t k) const;
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Throws std::out_of_range for a class outside [0, k) and
/// std::invalid_argument for unequal lengths.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t k);

struct Scores {
  double oa = 0, aa = 0, kappa = 0;
  std::vector<double> recall;   // NaN for a class with no true samples
  std::vector<double> f1;
  std::uint64_t n = 0;
};

/// Throws std::invalid_argument on an empty matrix.
Scores scores(const ConfusionMatrix& cm);

/// "95.23" style: value in [0, 1] as a percentage with two decimals.
std::string percent(double fraction);

/// Writes dir/per_class.csv (class,recall,f1) and dir/summary.json
/// ({oa, aa, kappa, n}); scores are percentages with two decimals.
void write_report(const Scores& s, const std::vector<std::string>& class_names, const std::string& dir);

struct ParsedReport {
  std::vector<std::string> classes;
  std::vector<double> recall, f1;  // percentages as written
};
ParsedReport read_per_class_csv(const std::string& path);

}  // namespace dctm
