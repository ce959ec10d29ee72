#include "emflow/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "emflow/errors.hpp"

namespace emflow {

void sort_ranked(std::vector<RankedPrediction>& ranked) {
  std::sort(ranked.begin(), ranked.end(),
            [](const RankedPrediction& a, const RankedPrediction& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.bag_id != b.bag_id) return a.bag_id < b.bag_id;
              return a.label < b.label;
            });
}

double p_at_n(const std::vector<RankedPrediction>& ranked, long n) {
  if (ranked.empty()) {
    throw MetricError("p_at_n: empty ranked list");
  }
  if (n < 1) {
    throw MetricError("p_at_n: n must be >= 1");
  }
  const long top = std::min<long>(n, static_cast<long>(ranked.size()));
  long hits = 0;
  for (long r = 0; r < top; ++r) {
    hits += ranked[static_cast<std::size_t>(r)].correct ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(top);
}

double average_precision(const std::vector<RankedPrediction>& ranked,
                         long total_positives) {
  if (total_positives < 1) {
    throw MetricError("average_precision: total_positives must be >= 1");
  }
  // Extended precision keeps the sum of precision@r values exact enough to
  // round to the true rational value (e.g. exactly 5/6 for the worked case).
  long double acc = 0.0L;
  long hits = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r].correct) {
      ++hits;
      acc += static_cast<long double>(hits) / static_cast<long double>(r + 1);
    }
  }
  return static_cast<double>(acc / static_cast<long double>(total_positives));
}

std::vector<PrPoint> pr_curve(const std::vector<RankedPrediction>& ranked,
                              long total_positives) {
  if (ranked.empty()) {
    throw MetricError("pr_curve: empty ranked list");
  }
  if (total_positives < 1) {
    throw MetricError("pr_curve: total_positives must be >= 1");
  }
  std::vector<PrPoint> curve;
  curve.reserve(ranked.size());
  long hits = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    hits += ranked[r].correct ? 1 : 0;
    PrPoint p;
    p.rank = static_cast<long>(r + 1);
    p.score = ranked[r].score;
    p.precision = static_cast<double>(hits) / static_cast<double>(r + 1);
    p.recall = static_cast<double>(hits) / static_cast<double>(total_positives);
    curve.push_back(p);
  }
  return curve;
}

TransitionRecovery transition_error(const TransitionMatrix& t_hat,
                                    const TransitionMatrix& t_star) {
  if (t_hat.classes() != t_star.classes()) {
    throw ShapeError("transition_error: class count mismatch");
  }
  const Index k_count = t_hat.classes();
  TransitionRecovery out;
  double total = 0.0;
  long cells = 0;
  for (Index i = 0; i < k_count; ++i) {
    for (Index k = 0; k < k_count; ++k) {
      if (i == k) continue;
      const double diff = std::abs(t_hat(i, k) - t_star(i, k));
      out.max_abs = std::max(out.max_abs, diff);
      total += diff;
      ++cells;
    }
  }
  out.mean_abs = total / static_cast<double>(cells);
  return out;
}

EvalReport evaluate_dataset(const std::vector<LabeledInstance>& instances,
                            const ModelParams& params, Index max_len,
                            Index na_class) {
  if (instances.empty()) {
    throw MetricError("evaluate_dataset: no instances");
  }
  // std::map keeps bags in lexicographic bag_id order, which doubles as the
  // deterministic tie-break order for equal scores.
  std::map<std::string, std::vector<const LabeledInstance*>> bags;
  for (const auto& ins : instances) {
    bags[ins.bag_id].push_back(&ins);
  }

  EvalReport report;
  std::vector<RankedPrediction> ranked;
  long correct_instances = 0;
  bool all_true_labels = true;

  for (const auto& [bag_id, members] : bags) {
    std::vector<Vector> probs;
    probs.reserve(members.size());
    for (const auto* ins : members) {
      probs.push_back(predict_instance(*ins, params, max_len));
    }
    const auto pred = predict_bag(probs, na_class);

    Index truth = members.front()->noisy_label;
    if (members.front()->true_label.has_value()) {
      truth = *members.front()->true_label;
    } else {
      all_true_labels = false;
    }
    if (truth != na_class) {
      ++report.total_positive_bags;
    }
    if (pred.label != na_class) {
      RankedPrediction rp;
      rp.bag_id = bag_id;
      rp.label = pred.label;
      rp.score = pred.score;
      rp.correct = pred.label == truth;
      ranked.push_back(std::move(rp));
    }

    for (std::size_t m = 0; m < members.size(); ++m) {
      if (!members[m]->true_label.has_value()) {
        all_true_labels = false;
        continue;
      }
      Index argmax = 0;
      probs[m].maxCoeff(&argmax);
      correct_instances += argmax == *members[m]->true_label ? 1 : 0;
    }
  }

  sort_ranked(ranked);
  report.ranked_predictions = static_cast<long>(ranked.size());
  if (!ranked.empty() && report.total_positive_bags > 0) {
    report.curve = pr_curve(ranked, report.total_positive_bags);
    report.average_precision =
        average_precision(ranked, report.total_positive_bags);
    for (long n : {100L, 200L, 300L, 1000L}) {
      if (static_cast<long>(ranked.size()) >= n) {
        report.p_at[n] = p_at_n(ranked, n);
      }
    }
  }
  if (all_true_labels) {
    report.instance_accuracy = static_cast<double>(correct_instances) /
                               static_cast<double>(instances.size());
  }
  return report;
}

void write_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["average_precision"] = report.average_precision;
  j["total_positive_bags"] = report.total_positive_bags;
  j["ranked_predictions"] = report.ranked_predictions;
  nlohmann::json pn = nlohmann::json::object();
  for (const auto& [n, value] : report.p_at) {
    pn["p_at_" + std::to_string(n)] = value;
  }
  j["p_at_n"] = std::move(pn);
  if (report.transition) {
    j["transition_error"] = {{"max_abs", report.transition->max_abs},
                             {"mean_abs", report.transition->mean_abs}};
  }
  if (report.instance_accuracy) {
    j["instance_accuracy"] = *report.instance_accuracy;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("write_report_json: cannot open " + path);
  }
  os << j.dump(2) << '\n';
}

void write_pr_table(const EvalReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("write_pr_table: cannot open " + path);
  }
  os << "# rank\tscore\tprecision\trecall\n";
  char buf[128];
  for (const auto& p : report.curve) {
    std::snprintf(buf, sizeof(buf), "%ld\t%.10g\t%.10g\t%.10g\n", p.rank,
                  p.score, p.precision, p.recall);
    os << buf;
  }
}

}  // namespace emflow
