#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emflow/instance.hpp"
#include "emflow/noisemodel.hpp"
#include "emflow/trainer.hpp"

namespace emflow {

// One positive bag-level prediction. NA predictions never enter the ranked
// list; they only count against recall through total_positives.
struct RankedPrediction {
  std::string bag_id;
  Index label = 0;
  double score = 0.0;
  bool correct = false;
};

// Descending score, ties broken by bag_id, then by label for stability.
void sort_ranked(std::vector<RankedPrediction>& ranked);

double p_at_n(const std::vector<RankedPrediction>& ranked, long n);

// AP = sum over correct hits at rank r of precision@r, divided by the total
// number of ground-truth positive bags.
double average_precision(const std::vector<RankedPrediction>& ranked,
                         long total_positives);

struct PrPoint {
  long rank = 0;
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

std::vector<PrPoint> pr_curve(const std::vector<RankedPrediction>& ranked,
                              long total_positives);

struct TransitionRecovery {
  double max_abs = 0.0;
  double mean_abs = 0.0;
};

// Max and mean absolute differences over off-diagonal entries.
TransitionRecovery transition_error(const TransitionMatrix& t_hat,
                                    const TransitionMatrix& t_star);

struct EvalReport {
  std::vector<PrPoint> curve;
  std::map<long, double> p_at;  // 100/200/300/1000 when applicable
  double average_precision = 0.0;
  long total_positive_bags = 0;
  long ranked_predictions = 0;
  std::optional<TransitionRecovery> transition;
  std::optional<double> instance_accuracy;  // vs true labels, synthetic only
};

// Groups instances by bag_id (lexicographic order), predicts each bag, and
// scores positives against the bag ground truth (true labels when present,
// noisy labels otherwise).
EvalReport evaluate_dataset(const std::vector<LabeledInstance>& instances,
                            const ModelParams& params, Index max_len,
                            Index na_class);

void write_report_json(const EvalReport& report, const std::string& path);
void write_pr_table(const EvalReport& report, const std::string& path);

}  // namespace emflow
