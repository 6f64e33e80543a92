#include "dctm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dctm {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < k_; ++j) t += (*this)(k, j);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t k) const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += (*this)(i, k);
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t k) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("confusion: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], t = labels[i];
    if (p < 0 || t < 0 || std::size_t(p) >= k || std::size_t(t) >= k)
      throw std::out_of_range("confusion: class index out of range at sample " + std::to_string(i));
    ++cm(std::size_t(t), std::size_t(p));
  }
  return cm;
}

Scores scores(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("scores: empty confusion matrix");
  const std::size_t k = cm.classes();
  const double n = static_cast<double>(total);
  Scores s;
  s.n = total;
  s.recall.assign(k, std::numeric_limits<double>::quiet_NaN());
  s.f1.assign(k, 0.0);
  double trace = 0, pe = 0, recall_sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm(c, c));
    const double row = static_cast<double>(cm.row_sum(c)), col = static_cast<double>(cm.col_sum(c));
    trace += tp;
    pe += row * col;
    if (row > 0) {
      s.recall[c] = tp / row;
      recall_sum += s.recall[c];
      ++present;
    }
    const double prec = col > 0 ? tp / col : 0.0;
    const double rec = row > 0 ? tp / row : 0.0;
    s.f1[c] = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  s.oa = trace / n;
  s.aa = recall_sum / static_cast<double>(present);
  pe /= n * n;
  // p_e = 1 only when every sample sits in a single class on both axes.
  s.kappa = pe < 1 ? (s.oa - pe) / (1 - pe) : 0.0;
  return s;
}

std::string percent(double fraction) {
  if (std::isnan(fraction)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

void write_report(const Scores& s, const std::vector<std::string>& class_names, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  {
    std::ofstream csv(base / "per_class.csv");
    if (!csv) throw std::runtime_error("cannot write " + (base / "per_class.csv").string());
    csv << "class,recall,f1\n";
    for (std::size_t c = 0; c < s.recall.size(); ++c) {
      const auto name = c < class_names.size() && !class_names[c].empty() ? class_names[c] : std::to_string(c + 1);
      csv << name << ',' << percent(s.recall[c]) << ',' << percent(s.f1[c]) << '\n';
    }
    if (!csv) throw std::runtime_error("write failed: per_class.csv");
  }
  std::ofstream json(base / "summary.json");
  if (!json) throw std::runtime_error("cannot write " + (base / "summary.json").string());
  json << "{\"oa\": " << percent(s.oa) << ", \"aa\": " << percent(s.aa) << ", \"kappa\": " << percent(s.kappa)
       << ", \"n\": " << s.n << "}\n";
  if (!json) throw std::runtime_error("write failed: summary.json");
}

ParsedReport read_per_class_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "class,recall,f1") throw std::runtime_error("unexpected header in " + path);
  ParsedReport r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.rfind(','), b = line.rfind(',', a - 1);
    if (a == std::string::npos || b == std::string::npos) throw std::runtime_error("malformed row in " + path);
    r.classes.push_back(line.substr(0, b));
    const auto rec = line.substr(b + 1, a - b - 1);
    r.recall.push_back(rec == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(rec));
    r.f1.push_back(std::stod(line.substr(a + 1)));
  }
  return r;
}

}  // namespace dctm
