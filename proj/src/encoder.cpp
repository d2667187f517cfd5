#include "attnfactor/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnfactor/io.hpp"
#include "attnfactor/mpte.hpp"

namespace attnfactor::enc {

namespace {
constexpr double kLnEps = 1e-5;

int log2_ceil(int v) {
  int bits = 0;
  while ((1 << bits) < v) ++bits;
  return bits;
}
}  // namespace

void EncoderConfig::finalize() {
  require(n_variables >= 1, "encoder: vocabulary must be nonempty");
  if (d_var <= 0) d_var = log2_ceil(n_variables) + 2;
  if (d_freq <= 0) d_freq = log2_ceil(2) + 2;
  require(d_model >= 2 && d_model % 2 == 0, "encoder: d_model must be even");
  require(n_head >= 1 && d_model % n_head == 0, "encoder: d_model must be divisible by n_head");
  require(n_layers >= 1, "encoder: need at least one layer");
  require(d_ff >= 1, "encoder: d_ff must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "encoder: dropout must lie in [0,1)");
}

void for_each_param(Params& p, const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("var_table", p.var_table);
  fn("freq_table", p.freq_table);
  fn("w_proj", p.w_proj);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "wq", lp.wq); fn(pre + "bq", lp.bq);
    fn(pre + "wk", lp.wk); fn(pre + "bk", lp.bk);
    fn(pre + "wv", lp.wv); fn(pre + "bv", lp.bv);
    fn(pre + "wo", lp.wo); fn(pre + "bo", lp.bo);
    fn(pre + "ln1_g", lp.ln1_g); fn(pre + "ln1_b", lp.ln1_b);
    fn(pre + "w1", lp.w1); fn(pre + "b1", lp.b1);
    fn(pre + "w2", lp.w2); fn(pre + "b2", lp.b2);
    fn(pre + "ln2_g", lp.ln2_g); fn(pre + "ln2_b", lp.ln2_b);
  }
  fn("head_w", p.head_w);
  fn("head_b", p.head_b);
}

void for_each_param(const Params& p,
                    const std::function<void(const std::string&, const Matrix&)>& fn) {
  for_each_param(const_cast<Params&>(p),
                 [&](const std::string& name, Matrix& m) { fn(name, m); });
}

void EncoderState::zero_grads() {
  for_each_param(grads, [](const std::string&, Matrix& m) { m.setZero(); });
}

std::uint64_t EncoderState::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_param(params, [&](const std::string& name, const Matrix& m) {
    h ^= fnv1a64(name);
    h *= 0x100000001b3ULL;
    h ^= fnv1a64(m.data(), sizeof(double) * m.size());
    h *= 0x100000001b3ULL;
  });
  return h;
}

EncoderState init_encoder(const EncoderConfig& config_in, std::uint64_t seed) {
  EncoderConfig config = config_in;
  config.finalize();

  EncoderState state;
  state.config = config;
  state.dropout_seed = derive_seed(seed, 0x0d50);

  auto shape = [&](Params& p) {
    p.var_table = Matrix(config.n_variables, config.d_var);
    p.freq_table = Matrix(2, config.d_freq);
    p.w_proj = Matrix(config.d_model, config.d_in());
    p.layers.resize(config.n_layers);
    for (auto& lp : p.layers) {
      lp.wq = lp.wk = lp.wv = lp.wo = Matrix(config.d_model, config.d_model);
      lp.bq = lp.bk = lp.bv = lp.bo = Matrix(config.d_model, 1);
      lp.ln1_g = lp.ln1_b = lp.ln2_g = lp.ln2_b = Matrix(config.d_model, 1);
      lp.w1 = Matrix(config.d_ff, config.d_model);
      lp.b1 = Matrix(config.d_ff, 1);
      lp.w2 = Matrix(config.d_model, config.d_ff);
      lp.b2 = Matrix(config.d_model, 1);
    }
    p.head_w = Matrix(config.d_model, 1);
    p.head_b = Matrix(1, 1);
  };
  shape(state.params);
  shape(state.grads);
  state.zero_grads();

  Rng rng(seed);
  for_each_param(state.params, [&](const std::string& name, Matrix& m) {
    if (name.find("ln") != std::string::npos) {
      // Identity-initialized normalization.
      bool gain = name.find("_g") != std::string::npos;
      m.setConstant(gain ? 1.0 : 0.0);
      return;
    }
    double fan_in = static_cast<double>(m.cols());
    if (name == "var_table" || name == "freq_table") fan_in = static_cast<double>(m.cols());
    double bound = 1.0 / std::sqrt(std::max(fan_in, 1.0));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  });
  return state;
}

Vector temporal_encoding(std::int64_t t, int d_model) {
  require(d_model >= 2 && d_model % 2 == 0, "temporal_encoding: d_model must be even");
  Vector te(d_model);
  for (int j = 0; j < d_model / 2; ++j) {
    double denom = std::pow(10000.0, 2.0 * j / static_cast<double>(d_model));
    te(2 * j) = std::sin(static_cast<double>(t) / denom);
    te(2 * j + 1) = std::cos(static_cast<double>(t) / denom);
  }
  return te;
}

TokenSequence build_sequence(const panels::Panel& high, const panels::Panel& low,
                             int window_periods, std::int64_t as_of_month,
                             const Ablations& ablations, int r,
                             std::optional<std::int64_t> sample_start_month) {
  require(window_periods >= 1, "build_sequence: window must be positive");
  require(r >= 1, "build_sequence: invalid frequency ratio");
  std::int64_t start_month =
      sample_start_month.value_or(high.rows() > 0 ? high.timestamps.front()
                                                  : r * low.timestamps.front());
  std::int64_t lo = as_of_month - window_periods;  // exclusive

  struct Raw {
    std::int64_t month;
    int freq_rank;  // low-frequency tokens first among timestamp ties
    int variable_id;
    panels::Frequency frequency;
    double value;
  };
  std::vector<Raw> raw;

  for (Eigen::Index t = 0; t < low.rows(); ++t) {
    std::int64_t month = static_cast<std::int64_t>(r) * low.timestamps[t] + (r - 1);
    if (month <= lo || month > as_of_month) continue;
    for (Eigen::Index j = 0; j < low.cols(); ++j) {
      if (low.missing_mask(t, j)) continue;
      raw.push_back({month, 0, low.meta[j].id, panels::Frequency::Low, low.values(t, j)});
    }
  }
  if (!ablations.low_freq_only) {
    for (Eigen::Index t = 0; t < high.rows(); ++t) {
      std::int64_t month = high.timestamps[t];
      if (month <= lo || month > as_of_month) continue;
      for (Eigen::Index j = 0; j < high.cols(); ++j) {
        if (high.missing_mask(t, j)) continue;
        raw.push_back({month, 1, high.meta[j].id, panels::Frequency::High, high.values(t, j)});
      }
    }
  }
  if (raw.empty())
    throw ArgumentError("build_sequence: no observations fall inside the context window");

  std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) {
    if (a.month != b.month) return a.month < b.month;
    return a.freq_rank < b.freq_rank;
  });

  TokenSequence seq;
  seq.context_start = lo - start_month;
  seq.context_end = as_of_month - start_month;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Token tok;
    tok.position = static_cast<int>(i);
    tok.variable_id = raw[i].variable_id;
    tok.timestamp = raw[i].month - start_month;
    tok.frequency = raw[i].frequency;
    tok.value = raw[i].value;
    seq.tokens.push_back(tok);
  }
  return seq;
}

namespace {

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  double keep = 1.0 - p;
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask;
}

struct LnTrace {
  Matrix xhat;
  Vector inv_std;
};

Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, LnTrace& trace) {
  const Eigen::Index l = x.rows(), d = x.cols();
  trace.xhat = Matrix(l, d);
  trace.inv_std = Vector(l);
  Matrix out(l, d);
  for (Eigen::Index i = 0; i < l; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + kLnEps);
    trace.inv_std(i) = inv;
    trace.xhat.row(i) = (x.row(i).array() - mu) * inv;
    out.row(i) = trace.xhat.row(i).cwiseProduct(gain.col(0).transpose()) + bias.col(0).transpose();
  }
  return out;
}

Matrix layer_norm_backward(const Matrix& grad_out, const LnTrace& trace, const Matrix& gain,
                           Matrix& g_gain, Matrix& g_bias) {
  const Eigen::Index l = grad_out.rows(), d = grad_out.cols();
  Matrix dx(l, d);
  for (Eigen::Index i = 0; i < l; ++i) {
    Eigen::RowVectorXd dy = grad_out.row(i);
    Eigen::RowVectorXd xh = trace.xhat.row(i);
    g_gain.col(0) += dy.cwiseProduct(xh).transpose();
    g_bias.col(0) += dy.transpose();
    Eigen::RowVectorXd dxhat = dy.cwiseProduct(gain.col(0).transpose());
    double m1 = dxhat.mean();
    double m2 = dxhat.cwiseProduct(xh).mean();
    dx.row(i) = trace.inv_std(i) * (dxhat.array() - m1 - xh.array() * m2);
  }
  return dx;
}

struct LayerTrace {
  Matrix x_in;
  Matrix q, k, v;
  std::vector<Matrix> attn;  // per head, L x L
  Matrix ctx;
  Matrix attn_out;   // before dropout
  Matrix drop_mask1;
  LnTrace ln1;
  Matrix sub1;
  Matrix ffn_pre;
  Matrix ffn_act;
  Matrix ffn_out;    // before dropout
  Matrix drop_mask2;
  LnTrace ln2;
};

struct Trace {
  Matrix phi;      // L x d_in
  Matrix z0;       // embedded input
  std::vector<LayerTrace> layers;
  Matrix encoding; // final L x d_model
  Vector pooled;
  double prediction = 0.0;
};

void add_row_bias(Matrix& m, const Matrix& bias) {
  m.rowwise() += bias.col(0).transpose();
}

Trace run_forward(const TokenSequence& seq, EncoderState& state, Mode mode,
                  bool capture_attention, AttentionRecord* record) {
  const EncoderConfig& cfg = state.config;
  const Params& p = state.params;
  const int l_len = seq.length();
  require(l_len >= 1, "encoder_forward: empty sequence");
  const int d = cfg.d_model;
  const int heads = cfg.n_head;
  const int dh = d / heads;
  const bool use_dropout = mode == Mode::Train && cfg.dropout > 0.0;

  Trace tr;
  // Embedding: phi = concat(r*, e_var, e_freq); z = W_proj phi (+ TE).
  tr.phi = Matrix(l_len, cfg.d_in());
  for (int i = 0; i < l_len; ++i) {
    const Token& tok = seq.tokens[i];
    require(tok.variable_id >= 0 && tok.variable_id < cfg.n_variables,
            "embed_tokens: unknown variable id " + std::to_string(tok.variable_id));
    tr.phi(i, 0) = tok.value;
    tr.phi.block(i, 1, 1, cfg.d_var) = p.var_table.row(tok.variable_id);
    tr.phi.block(i, 1 + cfg.d_var, 1, cfg.d_freq) =
        p.freq_table.row(tok.frequency == panels::Frequency::High ? 0 : 1);
  }
  tr.z0 = tr.phi * p.w_proj.transpose();
  if (!cfg.ablations.no_temporal_encoding)
    for (int i = 0; i < l_len; ++i)
      tr.z0.row(i) += temporal_encoding(seq.tokens[i].timestamp, d).transpose();

  if (record != nullptr) {
    record->no_attention = cfg.ablations.no_attention;
    record->variable_ids.clear();
    record->lags.clear();
    for (const Token& tok : seq.tokens) {
      record->variable_ids.push_back(tok.variable_id);
      record->lags.push_back(seq.context_end - tok.timestamp);
    }
  }

  Matrix x = tr.z0;
  tr.layers.resize(cfg.n_layers);
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    LayerTrace& lt = tr.layers[layer];
    const LayerParams& lp = p.layers[layer];
    lt.x_in = x;

    Matrix sub1;
    if (cfg.ablations.no_attention) {
      // AB2: the attention sublayer is an identity pass-through; the residual
      // path carries x unchanged and no normalization is applied here.
      sub1 = x;
    } else {
      lt.q = x * lp.wq.transpose();
      add_row_bias(lt.q, lp.bq);
      lt.k = x * lp.wk.transpose();
      add_row_bias(lt.k, lp.bk);
      lt.v = x * lp.wv.transpose();
      add_row_bias(lt.v, lp.bv);

      lt.ctx = Matrix(l_len, d);
      lt.attn.resize(heads);
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      for (int h = 0; h < heads; ++h) {
        Matrix qh = lt.q.middleCols(h * dh, dh);
        Matrix kh = lt.k.middleCols(h * dh, dh);
        Matrix vh = lt.v.middleCols(h * dh, dh);
        Matrix scores = qh * kh.transpose() * scale;
        lt.attn[h] = nn::softmax_rows(scores);
        lt.ctx.middleCols(h * dh, dh) = lt.attn[h] * vh;
      }
      if (capture_attention && record != nullptr) record->weights.push_back(lt.attn);

      lt.attn_out = lt.ctx * lp.wo.transpose();
      add_row_bias(lt.attn_out, lp.bo);
      Matrix dropped = lt.attn_out;
      if (use_dropout) {
        Rng drop_rng(derive_seed(state.dropout_seed, state.dropout_draws++));
        lt.drop_mask1 = dropout_mask(l_len, d, cfg.dropout, drop_rng);
        dropped = dropped.cwiseProduct(lt.drop_mask1);
      }
      Matrix res1 = lt.x_in + dropped;
      sub1 = cfg.layer_norm ? layer_norm_forward(res1, lp.ln1_g, lp.ln1_b, lt.ln1) : res1;
    }
    lt.sub1 = sub1;

    lt.ffn_pre = sub1 * lp.w1.transpose();
    add_row_bias(lt.ffn_pre, lp.b1);
    nn::Activation act = cfg.ablations.no_nonlinearity ? nn::Activation::Identity : cfg.activation;
    lt.ffn_act = nn::activate(lt.ffn_pre, act);
    lt.ffn_out = lt.ffn_act * lp.w2.transpose();
    add_row_bias(lt.ffn_out, lp.b2);
    Matrix dropped2 = lt.ffn_out;
    if (use_dropout) {
      Rng drop_rng(derive_seed(state.dropout_seed, state.dropout_draws++));
      lt.drop_mask2 = dropout_mask(l_len, d, cfg.dropout, drop_rng);
      dropped2 = dropped2.cwiseProduct(lt.drop_mask2);
    }
    Matrix res2 = sub1 + dropped2;
    x = cfg.layer_norm ? layer_norm_forward(res2, lp.ln2_g, lp.ln2_b, lt.ln2) : res2;
    if (!x.allFinite())
      throw NumericError("encoder_forward: non-finite activations in layer " +
                         std::to_string(layer));
  }

  tr.encoding = x;
  tr.pooled = cfg.pooling == Pooling::Mean ? Vector(x.colwise().mean().transpose())
                                           : Vector(x.row(l_len - 1).transpose());
  tr.prediction = p.head_w.col(0).dot(tr.pooled) + p.head_b(0, 0);
  return tr;
}

// Reverse pass matching run_forward; accumulates into state.grads.
void run_backward(const TokenSequence& seq, EncoderState& state, const Trace& tr,
                  double d_prediction) {
  const EncoderConfig& cfg = state.config;
  const Params& p = state.params;
  Params& g = state.grads;
  const int l_len = seq.length();
  const int d = cfg.d_model;
  const int heads = cfg.n_head;
  const int dh = d / heads;

  g.head_w.col(0) += tr.pooled * d_prediction;
  g.head_b(0, 0) += d_prediction;

  Matrix dx = Matrix::Zero(l_len, d);
  if (cfg.pooling == Pooling::Mean) {
    Eigen::RowVectorXd row = (p.head_w.col(0) * d_prediction).transpose() /
                             static_cast<double>(l_len);
    dx.rowwise() += row;
  } else {
    dx.row(l_len - 1) += (p.head_w.col(0) * d_prediction).transpose();
  }

  for (int layer = cfg.n_layers - 1; layer >= 0; --layer) {
    const LayerTrace& lt = tr.layers[layer];
    const LayerParams& lp = p.layers[layer];
    LayerParams& gl = g.layers[layer];

    Matrix d_res2 = cfg.layer_norm
                        ? layer_norm_backward(dx, lt.ln2, lp.ln2_g, gl.ln2_g, gl.ln2_b)
                        : dx;
    Matrix d_sub1 = d_res2;
    Matrix d_ffn_out = d_res2;
    if (lt.drop_mask2.size() > 0) d_ffn_out = d_ffn_out.cwiseProduct(lt.drop_mask2);

    gl.w2 += d_ffn_out.transpose() * lt.ffn_act;
    gl.b2.col(0) += d_ffn_out.colwise().sum().transpose();
    Matrix d_act = d_ffn_out * lp.w2;
    nn::Activation act = cfg.ablations.no_nonlinearity ? nn::Activation::Identity : cfg.activation;
    Matrix d_pre = nn::activate_backward(lt.ffn_pre, d_act, act);
    gl.w1 += d_pre.transpose() * lt.sub1;
    gl.b1.col(0) += d_pre.colwise().sum().transpose();
    d_sub1 += d_pre * lp.w1;

    if (cfg.ablations.no_attention) {
      dx = d_sub1;
      continue;
    }

    Matrix d_res1 = cfg.layer_norm
                        ? layer_norm_backward(d_sub1, lt.ln1, lp.ln1_g, gl.ln1_g, gl.ln1_b)
                        : d_sub1;
    Matrix d_x_in = d_res1;
    Matrix d_attn_out = d_res1;
    if (lt.drop_mask1.size() > 0) d_attn_out = d_attn_out.cwiseProduct(lt.drop_mask1);

    gl.wo += d_attn_out.transpose() * lt.ctx;
    gl.bo.col(0) += d_attn_out.colwise().sum().transpose();
    Matrix d_ctx = d_attn_out * lp.wo;

    Matrix dq = Matrix::Zero(l_len, d);
    Matrix dk = Matrix::Zero(l_len, d);
    Matrix dv = Matrix::Zero(l_len, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
      Matrix d_ctx_h = d_ctx.middleCols(h * dh, dh);
      Matrix qh = lt.q.middleCols(h * dh, dh);
      Matrix kh = lt.k.middleCols(h * dh, dh);
      Matrix vh = lt.v.middleCols(h * dh, dh);
      Matrix d_attn = d_ctx_h * vh.transpose();
      dv.middleCols(h * dh, dh) = lt.attn[h].transpose() * d_ctx_h;
      Matrix d_scores = nn::softmax_backward(lt.attn[h], d_attn);
      dq.middleCols(h * dh, dh) = d_scores * kh * scale;
      dk.middleCols(h * dh, dh) = d_scores.transpose() * qh * scale;
    }

    gl.wq += dq.transpose() * lt.x_in;
    gl.bq.col(0) += dq.colwise().sum().transpose();
    gl.wk += dk.transpose() * lt.x_in;
    gl.bk.col(0) += dk.colwise().sum().transpose();
    gl.wv += dv.transpose() * lt.x_in;
    gl.bv.col(0) += dv.colwise().sum().transpose();
    d_x_in += dq * lp.wq + dk * lp.wk + dv * lp.wv;
    dx = d_x_in;
  }

  // Embedding backward; the temporal encoding is a constant shift.
  g.w_proj += dx.transpose() * tr.phi;
  Matrix d_phi = dx * p.w_proj;
  for (int i = 0; i < l_len; ++i) {
    const Token& tok = seq.tokens[i];
    g.var_table.row(tok.variable_id) += d_phi.block(i, 1, 1, cfg.d_var);
    g.freq_table.row(tok.frequency == panels::Frequency::High ? 0 : 1) +=
        d_phi.block(i, 1 + cfg.d_var, 1, cfg.d_freq);
  }
}

}  // namespace

Matrix embed_tokens(const TokenSequence& seq, const EncoderState& state) {
  EncoderState& mut = const_cast<EncoderState&>(state);
  Trace tr = run_forward(seq, mut, Mode::Eval, false, nullptr);
  return tr.z0;
}

ForwardResult encoder_forward(const TokenSequence& seq, EncoderState& state, Mode mode,
                              bool capture_attention) {
  ForwardResult out;
  AttentionRecord record;
  Trace tr = run_forward(seq, state, mode, capture_attention, &record);
  out.prediction = tr.prediction;
  out.encoding = tr.encoding;
  out.record = std::move(record);
  return out;
}

double predict(const TokenSequence& seq, EncoderState& state) {
  return run_forward(seq, state, Mode::Eval, false, nullptr).prediction;
}

double loss_and_gradients(const std::vector<std::pair<TokenSequence, double>>& batch,
                          EncoderState& state, Mode mode) {
  require(!batch.empty(), "loss_and_gradients: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& [seq, target] : batch) {
    Trace tr = run_forward(seq, state, mode, false, nullptr);
    double err = tr.prediction - target;
    loss += err * err * inv_b;
    run_backward(seq, state, tr, 2.0 * err * inv_b);
  }
  if (!std::isfinite(loss)) throw NumericError("loss_and_gradients: non-finite loss");
  return loss;
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const EncoderConfig& config,
                  const TrainHyper& hyper) {
  require(!train_set.empty() && !val_set.empty(), "train: empty split");
  EncoderState state = init_encoder(config, hyper.seed);
  Rng shuffle_rng(derive_seed(hyper.seed, 0x5855));

  auto val_mse = [&]() {
    double s = 0.0;
    for (const auto& [seq, target] : val_set) {
      double e = predict(seq, state) - target;
      s += e * e;
    }
    return s / static_cast<double>(val_set.size());
  };

  TrainResult result;
  result.state = state;
  result.best_val_mse = val_mse();
  result.best_epoch = -1;

  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  int since_best = 0;
  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hyper.batch_size)) {
      std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      Dataset batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
      state.zero_grads();
      double loss;
      try {
        loss = loss_and_gradients(batch, state, Mode::Train);
      } catch (const NumericError&) {
        throw NumericError("train: divergence at epoch " + std::to_string(epoch));
      }
      epoch_loss += loss;
      ++batches;
      // Plain gradient descent step.
      std::vector<Matrix*> ps, gs;
      for_each_param(state.params, [&](const std::string&, Matrix& m) { ps.push_back(&m); });
      for_each_param(state.grads, [&](const std::string&, Matrix& m) { gs.push_back(&m); });
      for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] -= hyper.lr * *gs[i];
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_mse = batches > 0 ? epoch_loss / batches : 0.0;
    log.val_mse = val_mse();
    if (log.val_mse < result.best_val_mse - 1e-12) {
      result.best_val_mse = log.val_mse;
      result.best_epoch = epoch;
      result.state = state;
      since_best = 0;
      log.improved = true;
    } else {
      ++since_best;
    }
    result.history.push_back(log);
    if (since_best > hyper.patience) break;
  }
  return result;
}

SearchResult random_search(const SearchSpace& space, int n_trials, std::uint64_t seed,
                           const Dataset& train_set, const Dataset& val_set,
                           const EncoderConfig& base_config, const TrainHyper& base_hyper) {
  require(n_trials >= 1, "random_search: need at least one trial");
  SearchResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  auto pick_int = [&](const std::vector<int>& v) {
    return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
  };
  auto pick_double = [&](const std::vector<double>& v) {
    return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
  };

  for (int trial = 0; trial < n_trials; ++trial) {
    EncoderConfig config = base_config;
    TrainHyper hyper = base_hyper;
    for (int attempt = 0; attempt < 100; ++attempt) {
      config.d_model = pick_int(space.d_model);
      config.n_head = pick_int(space.n_head);
      config.n_layers = pick_int(space.n_layers);
      config.dropout = pick_double(space.dropout);
      config.d_ff = pick_int(space.d_ff);
      config.activation = space.activation[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(space.activation.size()) - 1))];
      hyper.lr = pick_double(space.lr);
      if (config.d_model % config.n_head == 0 && config.d_model % 2 == 0) break;
    }
    hyper.seed = derive_seed(seed, static_cast<std::uint64_t>(trial) + 1);
    TrainResult tr = train(train_set, val_set, config, hyper);
    TrialLog log;
    log.trial = trial;
    log.config = config;
    log.hyper = hyper;
    log.val_mse = tr.best_val_mse;
    result.trials.push_back(log);
    if (tr.best_val_mse < result.best_val_mse) {
      result.best_val_mse = tr.best_val_mse;
      result.best_config = config;
      result.best_hyper = hyper;
    }
  }
  return result;
}

HeatmapResult extract_attention_heatmaps(const std::vector<AttentionRecord>& records,
                                         int n_variables, int window_periods) {
  require(!records.empty(), "extract_attention_heatmaps: no records");
  HeatmapResult out;
  if (records.front().no_attention) {
    out.no_attention = true;
    out.variable_matrix = Matrix(0, 0);
    out.temporal_matrix = Matrix(0, 0);
    return out;
  }
  Matrix var_sum = Matrix::Zero(n_variables, n_variables);
  Matrix var_count = Matrix::Zero(n_variables, n_variables);
  Matrix lag_sum = Matrix::Zero(window_periods, window_periods);
  Matrix lag_count = Matrix::Zero(window_periods, window_periods);

  for (const auto& record : records) {
    if (record.no_attention)
      throw ArgumentError("extract_attention_heatmaps: mixed attention/no-attention records");
    const int l_len = static_cast<int>(record.variable_ids.size());
    for (const auto& per_layer : record.weights) {
      for (const Matrix& a : per_layer) {
        require(a.rows() == l_len && a.cols() == l_len,
                "extract_attention_heatmaps: inconsistent index maps");
        for (int qi = 0; qi < l_len; ++qi) {
          int vq = record.variable_ids[qi];
          std::int64_t lq = record.lags[qi];
          require(vq >= 0 && vq < n_variables, "heatmaps: variable id out of range");
          require(lq >= 0 && lq < window_periods, "heatmaps: lag out of range");
          for (int ki = 0; ki < l_len; ++ki) {
            int vk = record.variable_ids[ki];
            std::int64_t lk = record.lags[ki];
            var_sum(vq, vk) += a(qi, ki);
            var_count(vq, vk) += 1.0;
            lag_sum(lq, lk) += a(qi, ki);
            lag_count(lq, lk) += 1.0;
          }
        }
      }
    }
  }

  auto normalize = [](Matrix sum, const Matrix& count) {
    for (Eigen::Index i = 0; i < sum.rows(); ++i)
      for (Eigen::Index j = 0; j < sum.cols(); ++j)
        if (count(i, j) > 0.0) sum(i, j) /= count(i, j);
    for (Eigen::Index i = 0; i < sum.rows(); ++i) {
      double rs = sum.row(i).sum();
      if (rs > 0.0) sum.row(i) /= rs;
    }
    return sum;
  };
  out.variable_matrix = normalize(var_sum, var_count);
  out.temporal_matrix = normalize(lag_sum, lag_count);
  return out;
}

double linear_reduction_check(const Matrix& z_tilde, int k, std::uint64_t seed) {
  // Diagnostic configuration: single layer, identity activation, no dropout,
  // no normalization -- i.e. the linear autoencoder.
  mpte::GradientOptions opts;
  opts.seed = seed;
  mpte::LinearAutoencoderFit ae =
      mpte::fit_linear_autoencoder(z_tilde, k, mpte::AutoencoderMode::Gradient, opts);
  mpte::FactorFit pca = mpte::fit_attention_pca(z_tilde, k);
  return mpte::autoencoder_pca_subspace_distance(ae, pca);
}

void save_checkpoint(const std::filesystem::path& path, const EncoderState& state) {
  const EncoderConfig& c = state.config;
  nlohmann::json header{{"format", "attnfactor-checkpoint-v1"},
                        {"d_model", c.d_model},
                        {"n_head", c.n_head},
                        {"n_layers", c.n_layers},
                        {"d_ff", c.d_ff},
                        {"activation", nn::to_string(c.activation)},
                        {"dropout", c.dropout},
                        {"pooling", c.pooling == Pooling::Mean ? "mean" : "last"},
                        {"layer_norm", c.layer_norm},
                        {"n_variables", c.n_variables},
                        {"d_var", c.d_var},
                        {"d_freq", c.d_freq},
                        {"dropout_seed", state.dropout_seed},
                        {"ablations",
                         {{"no_nonlinearity", c.ablations.no_nonlinearity},
                          {"no_attention", c.ablations.no_attention},
                          {"no_temporal_encoding", c.ablations.no_temporal_encoding},
                          {"low_freq_only", c.ablations.low_freq_only}}},
                        {"pooling_note", "forecast head pools token encodings with equal weight"},
                        {"heatmap_note", "heads and layers averaged with equal weight"}};
  std::ostringstream out;
  out << header.dump() << "\n";
  for_each_param(state.params, [&](const std::string& name, const Matrix& m) {
    out << "## " << name << " " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out << ',';
        out << format_double(m(i, j));
      }
      out << "\n";
    }
  });
  write_text_file(path, out.str());
}

EncoderState load_checkpoint(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "load_checkpoint: empty file");
  nlohmann::json header = nlohmann::json::parse(line);
  EncoderConfig c;
  c.d_model = header.at("d_model").get<int>();
  c.n_head = header.at("n_head").get<int>();
  c.n_layers = header.at("n_layers").get<int>();
  c.d_ff = header.at("d_ff").get<int>();
  c.activation = nn::activation_from_string(header.at("activation").get<std::string>());
  c.dropout = header.at("dropout").get<double>();
  c.pooling = header.at("pooling").get<std::string>() == "mean" ? Pooling::Mean : Pooling::Last;
  c.layer_norm = header.at("layer_norm").get<bool>();
  c.n_variables = header.at("n_variables").get<int>();
  c.d_var = header.at("d_var").get<int>();
  c.d_freq = header.at("d_freq").get<int>();
  const auto& ab = header.at("ablations");
  c.ablations.no_nonlinearity = ab.at("no_nonlinearity").get<bool>();
  c.ablations.no_attention = ab.at("no_attention").get<bool>();
  c.ablations.no_temporal_encoding = ab.at("no_temporal_encoding").get<bool>();
  c.ablations.low_freq_only = ab.at("low_freq_only").get<bool>();

  EncoderState state = init_encoder(c, 0);
  state.dropout_seed = header.at("dropout_seed").get<std::uint64_t>();

  std::map<std::string, Matrix> blocks;
  std::string name;
  Eigen::Index rows = 0, cols = 0, row = 0;
  Matrix current;
  auto flush = [&]() {
    if (!name.empty()) {
      require(row == rows, "load_checkpoint: truncated block " + name);
      blocks[name] = current;
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("## ", 0) == 0) {
      flush();
      std::istringstream hs(line.substr(3));
      hs >> name >> rows >> cols;
      current = Matrix(rows, cols);
      row = 0;
    } else {
      std::istringstream ls(line);
      std::string cell;
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::getline(ls, cell, ',');
        current(row, j) = std::stod(cell);
      }
      ++row;
    }
  }
  flush();
  for_each_param(state.params, [&](const std::string& pname, Matrix& m) {
    auto it = blocks.find(pname);
    require(it != blocks.end(), "load_checkpoint: missing block " + pname);
    require(it->second.rows() == m.rows() && it->second.cols() == m.cols(),
            "load_checkpoint: shape mismatch for " + pname);
    m = it->second;
  });
  return state;
}

}  // namespace attnfactor::enc
