#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emflow/types.hpp"

namespace emflow {

// One annotated sentence: a token id sequence, two entity spans, the
// observed (possibly wrong) label, the hidden true label when the corpus is
// synthetic, and the entity-pair key used for bag aggregation.
struct LabeledInstance {
  std::vector<int> tokens;
  Span e1;
  Span e2;
  int noisy_label = 0;
  std::optional<int> true_label;
  std::string bag_id;
};

}  // namespace emflow
