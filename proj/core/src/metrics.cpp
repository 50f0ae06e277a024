#include "prodcat/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "prodcat/error.hpp"

namespace prodcat {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double MetricsReport::top(std::size_t k) const {
  const auto it = topk_accuracy.find(k);
  if (it == topk_accuracy.end()) {
    throw std::out_of_range("no top-" + std::to_string(k) + " accuracy in report");
  }
  return it->second;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["examples"] = examples;
  auto& topk = doc["topk_accuracy"] = nlohmann::ordered_json::object();
  for (const auto& [k, acc] : topk_accuracy) {
    topk[std::to_string(k)] = acc;
  }
  auto& classes = doc["per_class"] = nlohmann::ordered_json::object();
  for (const auto& [label, m] : per_class) {
    classes[label] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
  }
  return doc.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport report;
  try {
    const auto doc = nlohmann::json::parse(text);
    report.examples = doc.at("examples").get<std::size_t>();
    for (const auto& [k, acc] : doc.at("topk_accuracy").items()) {
      report.topk_accuracy[std::stoul(k)] = acc.get<double>();
    }
    for (const auto& [label, m] : doc.at("per_class").items()) {
      report.per_class[label] = {m.at("precision").get<double>(), m.at("recall").get<double>(),
                                 m.at("f1").get<double>(), m.at("support").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed metrics report: ") + e.what());
  }
  return report;
}

void MetricsReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json() << '\n';
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
}

MetricsReport MetricsReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

MetricsReport score_rankings(std::span<const std::vector<std::size_t>> ranked, std::span<const std::size_t> truth,
                             const std::vector<std::string>& labels) {
  if (ranked.size() != truth.size()) {
    throw std::invalid_argument("score_rankings: " + std::to_string(ranked.size()) + " rankings for " +
                                std::to_string(truth.size()) + " labels");
  }
  if (ranked.empty()) {
    throw std::invalid_argument("score_rankings: no examples");
  }
  const std::size_t classes = labels.size();
  const std::size_t kmax = std::min<std::size_t>(3, classes);
  std::vector<std::size_t> hits(4, 0);
  std::vector<std::size_t> tp(classes, 0), predicted(classes, 0), support(classes, 0);

  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    if (r.size() < kmax) {
      throw std::invalid_argument("score_rankings: ranking shorter than " + std::to_string(kmax));
    }
    const auto y = truth[i];
    if (y >= classes) {
      throw std::invalid_argument("score_rankings: label index out of range");
    }
    for (std::size_t k = 1; k <= 3; ++k) {
      const auto depth = std::min(k, kmax);
      if (std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(depth), y) !=
          r.begin() + static_cast<std::ptrdiff_t>(depth)) {
        ++hits[k];
      }
    }
    ++support[y];
    ++predicted[r[0]];
    if (r[0] == y) {
      ++tp[y];
    }
  }

  MetricsReport report;
  report.examples = ranked.size();
  for (std::size_t k = 1; k <= 3; ++k) {
    report.topk_accuracy[k] = ratio(hits[k], ranked.size());
  }
  for (std::size_t c = 0; c < classes; ++c) {
    ClassMetrics m;
    m.support = support[c];
    m.precision = ratio(tp[c], predicted[c]);
    m.recall = ratio(tp[c], support[c]);
    m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    report.per_class[labels[c]] = m;
  }
  return report;
}

std::vector<LiftEntry> f1_lift_report(const MetricsReport& a, const MetricsReport& b, std::size_t min_support) {
  const bool same_labels =
      a.per_class.size() == b.per_class.size() &&
      std::equal(a.per_class.begin(), a.per_class.end(), b.per_class.begin(),
                 [](const auto& x, const auto& y) { return x.first == y.first; });
  if (!same_labels) {
    throw std::invalid_argument("f1_lift_report: reports cover different label sets");
  }
  std::vector<LiftEntry> out;
  for (const auto& [label, ma] : a.per_class) {
    const auto& mb = b.per_class.at(label);
    if (ma.support != mb.support) {
      throw std::invalid_argument("f1_lift_report: support for '" + label + "' differs between reports");
    }
    if (ma.support < min_support) {
      continue;
    }
    out.push_back({label, mb.f1 - ma.f1, ma.support});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LiftEntry& x, const LiftEntry& y) { return x.delta_f1 > y.delta_f1; });
  return out;
}

}  // namespace prodcat
