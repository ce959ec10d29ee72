#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emflow/instance.hpp"
#include "emflow/noisemodel.hpp"
#include "emflow/rng.hpp"

namespace emflow {

// How the per-instance keep probability is chosen. SignalCount ties it to
// the number of class-signal tokens inside the entity spans; SourceMarker
// ties it to the count of reliability-marker tokens planted there by the
// generator. Both give the conditional correctness head something to learn;
// the marker feature is orthogonal to the class evidence.
enum class KeepSelector { Constant, SignalCount, SourceMarker };

std::string to_string(KeepSelector s);
KeepSelector keep_selector_from_string(const std::string& name);

// Ground-truth noise process: z ~ Bernoulli(keep), and on z = 0 the noisy
// label is drawn from column y of t_star.
struct NoiseSpec {
  TransitionMatrix t_star;
  double keep_prob = 0.7;  // rho_z = p(z = 1)
  KeepSelector selector = KeepSelector::Constant;
  // Half-width of the per-instance modulation under SignalCount: keep
  // probabilities spread over roughly [keep_prob - spread, keep_prob + spread].
  double keep_spread = 0.1;
};

struct SyntheticConfig {
  Index classes = 5;
  Index vocab = 60;          // base vocabulary; signal sets carved from it
  Index seq_len = 18;        // raw length before entity markers
  long instances = 1000;
  double signal_strength = 0.55;  // probability a span slot is a signal token
  Index signal_tokens_per_class = 6;
  Index span_len_min = 2;
  Index span_len_max = 3;
  Index bag_size_min = 1;
  Index bag_size_max = 3;
  // Fraction of instances drawn from an unreliable source. Those carry a
  // reliability-marker token in the second entity span and, under the
  // SourceMarker selector, a reduced keep probability.
  double unreliable_fraction = 0.0;
  Index marker_tokens = 4;
  std::uint64_t seed = 1;

  void validate() const;
  // Signal set of class k: token ids [k*s, (k+1)*s).
  Index signal_base(Index label) const {
    return label * signal_tokens_per_class;
  }
  // Reliability-marker pool sits directly above the signal sets.
  Index marker_base() const { return classes * signal_tokens_per_class; }
};

// Clean corpus: class-k instances put class-k signal tokens inside both
// entity spans with probability signal_strength (uniform vocabulary tokens
// otherwise) and uniform tokens elsewhere. Instances arrive grouped into
// bags that share an entity pair and a class; true_label == noisy_label.
std::vector<LabeledInstance> generate_clean(const SyntheticConfig& config);

// Sample a ground-truth transition matrix with Dirichlet(1) columns.
TransitionMatrix random_transition_matrix(Index classes, std::uint64_t seed);

// Overwrites noisy_label per the spec: keep with probability rho_z(x), else
// flip to a different class via column true_label of T*. true_label is
// preserved.
void corrupt_labels(std::vector<LabeledInstance>& instances,
                    const NoiseSpec& spec, std::uint64_t seed,
                    const SyntheticConfig* signal_config = nullptr);

// Per-instance keep probability under the spec's selector.
double keep_probability(const NoiseSpec& spec, const LabeledInstance& ins,
                        const SyntheticConfig* signal_config);

// JSON-lines dataset file: one instance per line with fields tokens, e1,
// e2, noisy_label, true_label (null when hidden) and bag_id.
void write_dataset(const std::vector<LabeledInstance>& instances,
                   const std::string& path);
std::vector<LabeledInstance> read_dataset(const std::string& path,
                                          Index classes);

}  // namespace emflow
