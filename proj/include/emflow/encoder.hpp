#pragma once

#include <vector>

#include "emflow/instance.hpp"
#include "emflow/ops.hpp"
#include "emflow/rng.hpp"
#include "emflow/types.hpp"

namespace emflow {

// Toy trainable sentence encoder: embedding lookup, one per-token tanh
// mixing layer, entity-span pooling through a shared tanh head, and a
// summary head on the leading summary token. Output feature is
// x = concat(b0, b_e1, b_e2) of size 3 * feature_dim.

struct EncoderDims {
  Index vocab = 0;        // base vocabulary, excludes reserved ids
  Index embed_dim = 32;   // d
  Index feature_dim = 32; // d'

  // Reserved ids sit directly above the base vocabulary.
  Index summary_id() const { return vocab; }
  Index marker_e1() const { return vocab + 1; }
  Index marker_e2() const { return vocab + 2; }
  Index table_rows() const { return vocab + 3; }
  Index output_dim() const { return 3 * feature_dim; }
};

struct EncoderParams {
  Matrix embedding;       // table_rows x d
  Matrix mix_weight;      // d x d
  Vector mix_bias;        // d
  Matrix entity_weight;   // d' x d, shared between both entities
  Vector entity_bias;     // d'
  Matrix summary_weight;  // d' x d
  Vector summary_bias;    // d'
};

struct EncoderGrads {
  Matrix embedding;
  Matrix mix_weight;
  Vector mix_bias;
  Matrix entity_weight;
  Vector entity_bias;
  Matrix summary_weight;
  Vector summary_bias;

  static EncoderGrads zeros(const EncoderDims& dims);
};

// Embedding uniform(-0.1, 0.1); weight matrices Xavier-style scaled uniform;
// biases zero.
EncoderParams init_encoder(const EncoderDims& dims, RngEngine& eng);

// Prepends the summary token, wraps each entity span in its marker id and
// re-indexes the spans. Sequences longer than max_len are truncated at the
// tail; spans pushed past the end are clamped to the final position.
// Rejects inputs already containing reserved ids.
LabeledInstance mark_entities(const LabeledInstance& raw,
                              const EncoderDims& dims, Index max_len);

enum class RunMode { Train, Eval };

// Intermediates retained for the reverse pass of one encoded instance.
struct EncodeCache {
  std::vector<int> tokens;          // marked token ids
  std::vector<Index> used;          // positions fed through the mixer
  Matrix states;                    // used.size() x d, tanh mixer outputs
  Span e1_rows, e2_rows;            // row ranges of `used` for each span
  Vector mean_e1, mean_e2;          // span means (pre-dropout)
  Vector in_summary, in_e1, in_e2;  // head inputs (post-dropout)
  Vector mask_summary, mask_e1, mask_e2;  // empty in eval mode
  Vector b0, be1, be2;              // head outputs
  double dropout_rate = 0.0;
  bool train_mode = false;
};

// Instance must already be marked. Dropout is applied before each head only
// in train mode and draws exactly 3 * embed_dim mask values from `eng`.
Vector encode(const LabeledInstance& marked, const EncoderParams& params,
              const EncoderDims& dims, RunMode mode, double dropout_rate,
              RngEngine* eng, EncodeCache* cache);

void encode_backward(const Vector& grad_x, const EncodeCache& cache,
                     const EncoderParams& params, const EncoderDims& dims,
                     EncoderGrads& grads);

}  // namespace emflow
