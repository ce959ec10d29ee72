#include "emflow/encoder.hpp"

#include <cmath>

#include "emflow/errors.hpp"

namespace emflow {

namespace {

double xavier_bound(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Matrix xavier_matrix(RngEngine& eng, Index rows, Index cols) {
  const double bound = xavier_bound(cols, rows);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = uniform(eng, -bound, bound);
    }
  }
  return m;
}

void check_span(const Span& s, Index len, const char* what) {
  if (s.first < 0 || s.last >= len || s.first > s.last) {
    throw SpanError(std::string("encoder: invalid span for ") + what);
  }
}

}  // namespace

EncoderGrads EncoderGrads::zeros(const EncoderDims& dims) {
  EncoderGrads g;
  g.embedding = Matrix::Zero(dims.table_rows(), dims.embed_dim);
  g.mix_weight = Matrix::Zero(dims.embed_dim, dims.embed_dim);
  g.mix_bias = Vector::Zero(dims.embed_dim);
  g.entity_weight = Matrix::Zero(dims.feature_dim, dims.embed_dim);
  g.entity_bias = Vector::Zero(dims.feature_dim);
  g.summary_weight = Matrix::Zero(dims.feature_dim, dims.embed_dim);
  g.summary_bias = Vector::Zero(dims.feature_dim);
  return g;
}

EncoderParams init_encoder(const EncoderDims& dims, RngEngine& eng) {
  EncoderParams p;
  p.embedding = Matrix(dims.table_rows(), dims.embed_dim);
  for (Index r = 0; r < p.embedding.rows(); ++r) {
    for (Index c = 0; c < p.embedding.cols(); ++c) {
      p.embedding(r, c) = uniform(eng, -0.1, 0.1);
    }
  }
  p.mix_weight = xavier_matrix(eng, dims.embed_dim, dims.embed_dim);
  p.mix_bias = Vector::Zero(dims.embed_dim);
  p.entity_weight = xavier_matrix(eng, dims.feature_dim, dims.embed_dim);
  p.entity_bias = Vector::Zero(dims.feature_dim);
  p.summary_weight = xavier_matrix(eng, dims.feature_dim, dims.embed_dim);
  p.summary_bias = Vector::Zero(dims.feature_dim);
  return p;
}

LabeledInstance mark_entities(const LabeledInstance& raw,
                              const EncoderDims& dims, Index max_len) {
  const Index len = static_cast<Index>(raw.tokens.size());
  if (len == 0) {
    throw SpanError("mark_entities: empty token sequence");
  }
  check_span(raw.e1, len, "e1");
  check_span(raw.e2, len, "e2");
  for (int id : raw.tokens) {
    if (id < 0) {
      throw VocabularyError("mark_entities: negative token id");
    }
    if (id >= dims.vocab) {
      throw VocabularyError(
          "mark_entities: input contains reserved ids; already marked?");
    }
  }
  if (max_len < 1) {
    throw ArgumentError("mark_entities: max_len must be >= 1");
  }

  LabeledInstance out = raw;
  out.tokens.clear();
  out.tokens.reserve(raw.tokens.size() + 5);
  out.tokens.push_back(static_cast<int>(dims.summary_id()));

  std::vector<Index> new_pos(static_cast<std::size_t>(len), 0);
  for (Index p = 0; p <= len; ++p) {
    // Closing markers first so adjacent spans nest as $ e1 $ # e2 #.
    if (p == raw.e1.last + 1) {
      out.tokens.push_back(static_cast<int>(dims.marker_e1()));
    }
    if (p == raw.e2.last + 1) {
      out.tokens.push_back(static_cast<int>(dims.marker_e2()));
    }
    if (p < len) {
      if (p == raw.e1.first) {
        out.tokens.push_back(static_cast<int>(dims.marker_e1()));
      }
      if (p == raw.e2.first) {
        out.tokens.push_back(static_cast<int>(dims.marker_e2()));
      }
      new_pos[static_cast<std::size_t>(p)] =
          static_cast<Index>(out.tokens.size());
      out.tokens.push_back(raw.tokens[static_cast<std::size_t>(p)]);
    }
  }

  out.e1 = {new_pos[static_cast<std::size_t>(raw.e1.first)],
            new_pos[static_cast<std::size_t>(raw.e1.last)]};
  out.e2 = {new_pos[static_cast<std::size_t>(raw.e2.first)],
            new_pos[static_cast<std::size_t>(raw.e2.last)]};

  if (static_cast<Index>(out.tokens.size()) > max_len) {
    out.tokens.resize(static_cast<std::size_t>(max_len));
    const Index end = max_len - 1;
    out.e1 = {std::min(out.e1.first, end), std::min(out.e1.last, end)};
    out.e2 = {std::min(out.e2.first, end), std::min(out.e2.last, end)};
  }
  return out;
}

Vector encode(const LabeledInstance& marked, const EncoderParams& params,
              const EncoderDims& dims, RunMode mode, double dropout_rate,
              RngEngine* eng, EncodeCache* cache) {
  const Index len = static_cast<Index>(marked.tokens.size());
  check_span(marked.e1, len, "e1");
  check_span(marked.e2, len, "e2");
  for (int id : marked.tokens) {
    if (id < 0 || id >= dims.table_rows()) {
      throw VocabularyError("encode: token id outside vocabulary");
    }
  }
  const bool train = mode == RunMode::Train;
  if (train && eng == nullptr) {
    throw ArgumentError("encode: train mode needs an engine for dropout");
  }

  EncodeCache local;
  EncodeCache& c = cache != nullptr ? *cache : local;
  c = EncodeCache{};
  c.tokens = marked.tokens;
  c.dropout_rate = dropout_rate;
  c.train_mode = train;

  c.used.push_back(0);  // summary token
  c.e1_rows = {static_cast<Index>(c.used.size()), 0};
  for (Index p = marked.e1.first; p <= marked.e1.last; ++p) c.used.push_back(p);
  c.e1_rows.last = static_cast<Index>(c.used.size()) - 1;
  c.e2_rows = {static_cast<Index>(c.used.size()), 0};
  for (Index p = marked.e2.first; p <= marked.e2.last; ++p) c.used.push_back(p);
  c.e2_rows.last = static_cast<Index>(c.used.size()) - 1;

  const Index d = dims.embed_dim;
  c.states = Matrix(static_cast<Index>(c.used.size()), d);
  for (Index r = 0; r < c.states.rows(); ++r) {
    const int tok = marked.tokens[static_cast<std::size_t>(c.used[r])];
    const Vector emb = params.embedding.row(tok).transpose();
    c.states.row(r) =
        tanh_fwd(params.mix_weight * emb + params.mix_bias).transpose();
  }

  const Vector s0 = c.states.row(0).transpose();
  c.mean_e1 = span_mean(c.states, c.e1_rows);
  c.mean_e2 = span_mean(c.states, c.e2_rows);

  if (train) {
    c.mask_summary = dropout_mask(*eng, d, dropout_rate);
    c.mask_e1 = dropout_mask(*eng, d, dropout_rate);
    c.mask_e2 = dropout_mask(*eng, d, dropout_rate);
    c.in_summary = apply_dropout(s0, c.mask_summary, dropout_rate);
    c.in_e1 = apply_dropout(c.mean_e1, c.mask_e1, dropout_rate);
    c.in_e2 = apply_dropout(c.mean_e2, c.mask_e2, dropout_rate);
  } else {
    c.in_summary = s0;
    c.in_e1 = c.mean_e1;
    c.in_e2 = c.mean_e2;
  }

  c.b0 = tanh_fwd(params.summary_weight * c.in_summary + params.summary_bias);
  c.be1 = tanh_fwd(params.entity_weight * c.in_e1 + params.entity_bias);
  c.be2 = tanh_fwd(params.entity_weight * c.in_e2 + params.entity_bias);
  return concat({c.b0, c.be1, c.be2});
}

void encode_backward(const Vector& grad_x, const EncodeCache& cache,
                     const EncoderParams& params, const EncoderDims& dims,
                     EncoderGrads& grads) {
  const Index dp = dims.feature_dim;
  if (grad_x.size() != 3 * dp) {
    throw ShapeError("encode_backward: gradient size mismatch");
  }
  const auto parts = concat_backward(grad_x, {dp, dp, dp});

  const Vector da0 = tanh_bwd(cache.b0, parts[0]);
  grads.summary_weight += da0 * cache.in_summary.transpose();
  grads.summary_bias += da0;
  Vector d_s0 = params.summary_weight.transpose() * da0;

  const Vector da1 = tanh_bwd(cache.be1, parts[1]);
  grads.entity_weight += da1 * cache.in_e1.transpose();
  grads.entity_bias += da1;
  Vector d_mean1 = params.entity_weight.transpose() * da1;

  const Vector da2 = tanh_bwd(cache.be2, parts[2]);
  grads.entity_weight += da2 * cache.in_e2.transpose();
  grads.entity_bias += da2;
  Vector d_mean2 = params.entity_weight.transpose() * da2;

  if (cache.train_mode) {
    d_s0 = dropout_backward(d_s0, cache.mask_summary, cache.dropout_rate);
    d_mean1 = dropout_backward(d_mean1, cache.mask_e1, cache.dropout_rate);
    d_mean2 = dropout_backward(d_mean2, cache.mask_e2, cache.dropout_rate);
  }

  Matrix d_states = Matrix::Zero(cache.states.rows(), cache.states.cols());
  d_states.row(0) += d_s0.transpose();
  span_mean_backward(d_mean1, cache.e1_rows, d_states);
  span_mean_backward(d_mean2, cache.e2_rows, d_states);

  for (Index r = 0; r < d_states.rows(); ++r) {
    const Vector s = cache.states.row(r).transpose();
    const Vector da = tanh_bwd(s, d_states.row(r).transpose());
    const int tok = cache.tokens[static_cast<std::size_t>(cache.used[r])];
    const Vector emb = params.embedding.row(tok).transpose();
    grads.mix_weight += da * emb.transpose();
    grads.mix_bias += da;
    grads.embedding.row(tok) +=
        (params.mix_weight.transpose() * da).transpose();
  }
}

}  // namespace emflow
