#include "emflow/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "emflow/errors.hpp"

namespace emflow {

namespace {

using nlohmann::json;

// Stream tags for counter-based seeding; instances are generated and
// corrupted independently of each other and of the total count.
constexpr std::uint64_t kBagStream = 0x1001;
constexpr std::uint64_t kInstanceStream = 0x2001;
constexpr std::uint64_t kCorruptStream = 0x3001;

Index count_signal_tokens(const LabeledInstance& ins, Index base,
                          Index count) {
  Index hits = 0;
  const auto in_signal = [&](Index pos) {
    const int tok = ins.tokens[static_cast<std::size_t>(pos)];
    return tok >= base && tok < base + count;
  };
  for (Index p = ins.e1.first; p <= ins.e1.last; ++p) hits += in_signal(p);
  for (Index p = ins.e2.first; p <= ins.e2.last; ++p) hits += in_signal(p);
  return hits;
}

}  // namespace

std::string to_string(KeepSelector s) {
  switch (s) {
    case KeepSelector::Constant:
      return "constant";
    case KeepSelector::SignalCount:
      return "signal-count";
    case KeepSelector::SourceMarker:
      return "source-marker";
  }
  throw ArgumentError("to_string: unknown keep selector");
}

KeepSelector keep_selector_from_string(const std::string& name) {
  if (name == "constant") return KeepSelector::Constant;
  if (name == "signal-count") return KeepSelector::SignalCount;
  if (name == "source-marker") return KeepSelector::SourceMarker;
  throw ArgumentError("unknown keep selector '" + name + "'");
}

void SyntheticConfig::validate() const {
  if (classes < 2) throw ArgumentError("synthetic config: classes < 2");
  if (instances < 1) throw ArgumentError("synthetic config: instances < 1");
  if (signal_tokens_per_class < 1) {
    throw ArgumentError("synthetic config: signal_tokens_per_class < 1");
  }
  if (unreliable_fraction < 0.0 || unreliable_fraction >= 1.0) {
    throw ArgumentError("synthetic config: unreliable_fraction outside [0, 1)");
  }
  if (marker_tokens < 1) {
    throw ArgumentError("synthetic config: marker_tokens < 1");
  }
  if (vocab < classes * signal_tokens_per_class + marker_tokens + 1) {
    throw ArgumentError(
        "synthetic config: vocabulary too small for signal and marker sets");
  }
  if (signal_strength < 0.0 || signal_strength > 1.0) {
    throw ArgumentError("synthetic config: signal_strength outside [0, 1]");
  }
  if (span_len_min < 1 || span_len_max < span_len_min) {
    throw ArgumentError("synthetic config: bad span length range");
  }
  if (seq_len < 2 * span_len_max + 2) {
    throw ArgumentError("synthetic config: seq_len too small for two spans");
  }
  if (bag_size_min < 1 || bag_size_max < bag_size_min) {
    throw ArgumentError("synthetic config: bad bag size range");
  }
}

std::vector<LabeledInstance> generate_clean(const SyntheticConfig& config) {
  config.validate();
  std::vector<LabeledInstance> out;
  out.reserve(static_cast<std::size_t>(config.instances));

  long bag_index = 0;
  while (static_cast<long>(out.size()) < config.instances) {
    RngEngine bag_eng = make_engine(
        config.seed, kBagStream + static_cast<std::uint64_t>(bag_index));
    const Index label = uniform_index(bag_eng, config.classes);
    const long bag_size = static_cast<long>(
        config.bag_size_min +
        uniform_index(bag_eng, config.bag_size_max - config.bag_size_min + 1));
    // Shared anchor tokens approximate a recurring entity pair.
    const auto draw_span_token = [&](RngEngine& eng) {
      if (uniform01(eng) < config.signal_strength) {
        return static_cast<int>(config.signal_base(label) +
                                uniform_index(eng,
                                              config.signal_tokens_per_class));
      }
      return static_cast<int>(uniform_index(eng, config.vocab));
    };
    const int anchor_e1 = draw_span_token(bag_eng);
    const int anchor_e2 = draw_span_token(bag_eng);

    char bag_name[32];
    std::snprintf(bag_name, sizeof(bag_name), "bag%08ld", bag_index);

    for (long member = 0;
         member < bag_size && static_cast<long>(out.size()) < config.instances;
         ++member) {
      const std::uint64_t counter =
          kInstanceStream + static_cast<std::uint64_t>(out.size());
      RngEngine eng = make_engine(config.seed, counter);

      LabeledInstance ins;
      ins.bag_id = bag_name;
      ins.true_label = static_cast<int>(label);
      ins.noisy_label = static_cast<int>(label);
      ins.tokens.resize(static_cast<std::size_t>(config.seq_len));
      for (auto& tok : ins.tokens) {
        tok = static_cast<int>(uniform_index(eng, config.vocab));
      }

      const Index len1 =
          config.span_len_min +
          uniform_index(eng, config.span_len_max - config.span_len_min + 1);
      const Index len2 =
          config.span_len_min +
          uniform_index(eng, config.span_len_max - config.span_len_min + 1);
      // e1 in the left half, e2 in the right half; spans never overlap.
      const Index half = config.seq_len / 2;
      const Index start1 = uniform_index(eng, half - len1 + 1);
      const Index start2 =
          half + uniform_index(eng, config.seq_len - half - len2 + 1);
      ins.e1 = {start1, start1 + len1 - 1};
      ins.e2 = {start2, start2 + len2 - 1};

      ins.tokens[static_cast<std::size_t>(ins.e1.first)] = anchor_e1;
      ins.tokens[static_cast<std::size_t>(ins.e2.first)] = anchor_e2;
      for (Index p = ins.e1.first + 1; p <= ins.e1.last; ++p) {
        ins.tokens[static_cast<std::size_t>(p)] = draw_span_token(eng);
      }
      for (Index p = ins.e2.first + 1; p <= ins.e2.last; ++p) {
        ins.tokens[static_cast<std::size_t>(p)] = draw_span_token(eng);
      }
      if (config.unreliable_fraction > 0.0 &&
          uniform01(eng) < config.unreliable_fraction) {
        // Unreliable source: plant a marker in the last slot of e2. Spans
        // are at least two tokens long there, so the anchor survives.
        ins.tokens[static_cast<std::size_t>(ins.e2.last)] = static_cast<int>(
            config.marker_base() + uniform_index(eng, config.marker_tokens));
      }
      out.push_back(std::move(ins));
    }
    ++bag_index;
  }
  return out;
}

TransitionMatrix random_transition_matrix(Index classes, std::uint64_t seed) {
  RngEngine eng = make_engine(seed, 0x7001);
  Matrix t = Matrix::Zero(classes, classes);
  for (Index k = 0; k < classes; ++k) {
    double total = 0.0;
    for (Index i = 0; i < classes; ++i) {
      if (i == k) continue;
      t(i, k) = -std::log(1.0 - uniform01(eng));  // Dirichlet(1) via exponentials
      total += t(i, k);
    }
    t.col(k) /= total;
  }
  return TransitionMatrix::from_matrix(t);
}

double keep_probability(const NoiseSpec& spec, const LabeledInstance& ins,
                        const SyntheticConfig* signal_config) {
  if (spec.selector == KeepSelector::Constant) {
    return spec.keep_prob;
  }
  if (signal_config == nullptr || !ins.true_label.has_value()) {
    throw ArgumentError(
        "keep_probability: conditional selectors need the synthetic config "
        "and true labels");
  }
  if (spec.selector == KeepSelector::SourceMarker) {
    const Index markers = count_signal_tokens(
        ins, signal_config->marker_base(), signal_config->marker_tokens);
    const double f = signal_config->unreliable_fraction;
    const double lo = std::clamp(spec.keep_prob - spec.keep_spread, 0.05, 0.95);
    // Choose the reliable-source rate so the population mean stays at
    // keep_prob: mean = f*lo + (1-f)*hi.
    const double hi =
        f < 1.0 ? std::clamp((spec.keep_prob - f * lo) / (1.0 - f), 0.05, 0.95)
                : lo;
    return markers > 0 ? lo : hi;
  }
  const Index base = signal_config->signal_base(*ins.true_label);
  const Index hits = count_signal_tokens(
      ins, base, signal_config->signal_tokens_per_class);
  const double expected =
      signal_config->signal_strength *
      static_cast<double>(ins.e1.length() + ins.e2.length());
  // Instances with clearer signal are annotated correctly more often.
  const double shifted =
      spec.keep_prob +
      spec.keep_spread * std::tanh(static_cast<double>(hits) - expected);
  return std::clamp(shifted, 0.05, 0.95);
}

void corrupt_labels(std::vector<LabeledInstance>& instances,
                    const NoiseSpec& spec, std::uint64_t seed,
                    const SyntheticConfig* signal_config) {
  if (spec.keep_prob < 0.0 || spec.keep_prob > 1.0) {
    throw ArgumentError("corrupt_labels: keep_prob outside [0, 1]");
  }
  const Index k_count = spec.t_star.classes();
  for (std::size_t n = 0; n < instances.size(); ++n) {
    auto& ins = instances[n];
    if (!ins.true_label.has_value()) {
      throw ArgumentError("corrupt_labels: instance lacks a true label");
    }
    const Index truth = *ins.true_label;
    if (truth < 0 || truth >= k_count) {
      throw ArgumentError("corrupt_labels: true label out of range");
    }
    RngEngine eng =
        make_engine(seed, kCorruptStream + static_cast<std::uint64_t>(n));
    const double keep = keep_probability(spec, ins, signal_config);
    if (uniform01(eng) < keep) {
      ins.noisy_label = static_cast<int>(truth);
      continue;
    }
    // Column `truth` is a distribution over wrong labels (zero diagonal).
    const double roll = uniform01(eng);
    double cdf = 0.0;
    Index pick = truth == 0 ? 1 : 0;
    for (Index i = 0; i < k_count; ++i) {
      if (i == truth) continue;
      cdf += spec.t_star(i, truth);
      if (roll < cdf) {
        pick = i;
        break;
      }
    }
    ins.noisy_label = static_cast<int>(pick);
  }
}

void write_dataset(const std::vector<LabeledInstance>& instances,
                   const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("write_dataset: cannot open " + path);
  }
  for (const auto& ins : instances) {
    json j;
    j["tokens"] = ins.tokens;
    j["e1"] = {ins.e1.first, ins.e1.last};
    j["e2"] = {ins.e2.first, ins.e2.last};
    j["noisy_label"] = ins.noisy_label;
    if (ins.true_label.has_value()) {
      j["true_label"] = *ins.true_label;
    } else {
      j["true_label"] = nullptr;
    }
    j["bag_id"] = ins.bag_id;
    os << j.dump() << '\n';
  }
  if (!os) {
    throw IoError("write_dataset: write failed for " + path);
  }
}

std::vector<LabeledInstance> read_dataset(const std::string& path,
                                          Index classes) {
  std::ifstream is(path);
  if (!is) {
    throw IoError("read_dataset: cannot open " + path);
  }
  std::vector<LabeledInstance> out;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fail = [&](const std::string& why) -> ParseError {
      return ParseError("read_dataset: " + path + ":" +
                        std::to_string(line_no) + ": " + why);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(std::string("malformed line: ") + e.what());
    }
    LabeledInstance ins;
    try {
      ins.tokens = j.at("tokens").get<std::vector<int>>();
      const auto e1 = j.at("e1").get<std::vector<Index>>();
      const auto e2 = j.at("e2").get<std::vector<Index>>();
      if (e1.size() != 2 || e2.size() != 2) {
        throw fail("span field must hold exactly two indices");
      }
      ins.e1 = {e1[0], e1[1]};
      ins.e2 = {e2[0], e2[1]};
      ins.noisy_label = j.at("noisy_label").get<int>();
      if (!j.at("true_label").is_null()) {
        ins.true_label = j.at("true_label").get<int>();
      }
      ins.bag_id = j.at("bag_id").get<std::string>();
    } catch (const json::exception& e) {
      throw fail(std::string("missing or mistyped field: ") + e.what());
    }

    const Index len = static_cast<Index>(ins.tokens.size());
    if (len == 0) throw fail("empty token sequence");
    for (const auto* span : {&ins.e1, &ins.e2}) {
      if (span->first < 0 || span->last >= len || span->first > span->last) {
        throw fail("field e1/e2: span outside the token sequence");
      }
    }
    if (ins.noisy_label < 0 || ins.noisy_label >= classes) {
      throw fail("field noisy_label: value " +
                 std::to_string(ins.noisy_label) + " outside [0, " +
                 std::to_string(classes) + ")");
    }
    if (ins.true_label.has_value() &&
        (*ins.true_label < 0 || *ins.true_label >= classes)) {
      throw fail("field true_label: value outside the class range");
    }
    out.push_back(std::move(ins));
  }
  return out;
}

}  // namespace emflow
