#include "dvt/metrics.hpp"

#include <cmath>
#include <json.hpp>
#include <sstream>

#include "dvt/error.hpp"
#include "dvt/model.hpp"

namespace dvt {

namespace {

void check_labels(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.empty()) throw DataError("metrics: empty label vector");
  if (y_true.size() != y_pred.size()) {
    throw ShapeError("metrics: " + std::to_string(y_true.size()) + " true labels, " +
                     std::to_string(y_pred.size()) + " predictions");
  }
}

std::vector<ClassScores> class_scores(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  std::vector<ClassScores> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = cm[c][c], predicted = 0, actual = 0;
    for (std::size_t j = 0; j < k; ++j) {
      predicted += cm[j][c];
      actual += cm[c][j];
    }
    ClassScores& s = out[c];
    s.support = actual;
    s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    s.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    const double pr = s.precision + s.recall;
    s.f1 = pr > 0.0 ? 2.0 * s.precision * s.recall / pr : 0.0;
  }
  return out;
}

double mean_f1(const std::vector<ClassScores>& scores) {
  double total = 0.0;
  std::size_t present = 0;
  for (const ClassScores& s : scores) {
    if (s.support == 0) continue;
    total += s.f1;
    ++present;
  }
  return total / static_cast<double>(present);
}

}  // namespace

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                 std::size_t classes) {
  check_labels(y_true, y_pred);
  ConfusionMatrix cm(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes ||
        static_cast<std::size_t>(p) >= classes) {
      throw DataError("metrics: label out of range [0, " + std::to_string(classes) + ") at row " +
                      std::to_string(i));
    }
    ++cm[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

double accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  check_labels(y_true, y_pred);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hits += y_true[i] == y_pred[i];
  return static_cast<double>(hits) / static_cast<double>(y_true.size());
}

double unweighted_mean_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t classes) {
  return mean_f1(class_scores(confusion_matrix(y_true, y_pred, classes)));
}

std::vector<double> prediction_entropy(const Tensor& probabilities, EntropyBase base) {
  if (probabilities.rank() != 2) {
    throw ShapeError("prediction_entropy: expects (N, K), got " + shape_string(probabilities.shape()));
  }
  const double scale = base == EntropyBase::bits ? 1.0 / std::log(2.0) : 1.0;
  std::vector<double> out(probabilities.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    double sum = 0.0, h = 0.0;
    for (std::size_t c = 0; c < probabilities.dim(1); ++c) {
      const double p = probabilities.at(r, c);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DataError("prediction_entropy: row " + std::to_string(r) + " has entry outside [0, 1]");
      }
      sum += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      std::ostringstream os;
      os << "prediction_entropy: row " << r << " sums to " << sum;
      throw DataError(os.str());
    }
    out[r] = h * scale;
  }
  return out;
}

EvalReport evaluate(const std::vector<int>& y_true, const Tensor& probabilities) {
  if (probabilities.rank() != 2) throw ShapeError("evaluate: expects (N, K) probabilities");
  const std::vector<int> y_pred = argmax_rows(probabilities);
  EvalReport r;
  r.confusion = confusion_matrix(y_true, y_pred, probabilities.dim(1));
  r.per_class = class_scores(r.confusion);
  r.mean_f1 = mean_f1(r.per_class);
  r.accuracy = accuracy(y_true, y_pred);
  r.entropy = prediction_entropy(probabilities);
  return r;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["accuracy"] = report.accuracy;
  doc["unweighted_mean_f1"] = report.mean_f1;
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassScores& s : report.per_class) {
    classes.push_back({{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                       {"support", s.support}});
  }
  doc["per_class"] = classes;
  doc["confusion"] = report.confusion;
  if (report.entropy) {
    double total = 0.0;
    for (double h : *report.entropy) total += h;
    doc["mean_entropy_bits"] = report.entropy->empty() ? 0.0 : total / static_cast<double>(report.entropy->size());
  }
  return doc.dump(2) + "\n";
}

std::string entropy_dump_csv(const Tensor& features, const std::vector<int>& y_true,
                             const Tensor& probabilities) {
  if (features.rank() != 2 || features.dim(0) != y_true.size() ||
      probabilities.rank() != 2 || probabilities.dim(0) != y_true.size()) {
    throw ShapeError("entropy_dump_csv: row counts disagree");
  }
  const std::vector<int> pred = argmax_rows(probabilities);
  const std::vector<double> h = prediction_entropy(probabilities);
  std::ostringstream os;
  os.precision(17);
  for (std::size_t c = 0; c < features.dim(1); ++c) os << 'x' << c << ',';
  os << "true,pred,entropy\n";
  for (std::size_t r = 0; r < y_true.size(); ++r) {
    for (std::size_t c = 0; c < features.dim(1); ++c) os << features.at(r, c) << ',';
    os << y_true[r] << ',' << pred[r] << ',' << h[r] << '\n';
  }
  return os.str();
}

}  // namespace dvt
