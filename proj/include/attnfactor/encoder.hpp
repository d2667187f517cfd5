#ifndef ATTNFACTOR_ENCODER_HPP
#define ATTNFACTOR_ENCODER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attnfactor/common.hpp"
#include "attnfactor/nn_core.hpp"
#include "attnfactor/panels.hpp"
#include "attnfactor/rng.hpp"

namespace attnfactor::enc {

// One observation in the mixed-frequency sequence: (variable, time,
// frequency, standardized value). Timestamps count highest-frequency periods
// since sample start.
struct Token {
  int position = 0;
  int variable_id = 0;
  std::int64_t timestamp = 0;
  panels::Frequency frequency = panels::Frequency::High;
  double value = 0.0;
};

struct TokenSequence {
  std::vector<Token> tokens;
  std::int64_t context_start = 0;  // exclusive
  std::int64_t context_end = 0;    // inclusive
  int target_variable = -1;
  int horizon = 1;  // low-frequency periods ahead of context_end

  int length() const { return static_cast<int>(tokens.size()); }
};

// AB1: feedforward activations replaced by identity.
// AB2: attention sublayer replaced by identity pass-through (AB3 = AB1 & AB2).
// AB4: no temporal encoding. AB5: low-frequency tokens only.
struct Ablations {
  bool no_nonlinearity = false;
  bool no_attention = false;
  bool no_temporal_encoding = false;
  bool low_freq_only = false;
};

enum class Pooling { Mean, Last };

struct EncoderConfig {
  int d_model = 16;
  int n_head = 2;
  int n_layers = 1;
  int d_ff = 32;
  nn::Activation activation = nn::Activation::Relu;
  double dropout = 0.0;
  Ablations ablations;
  Pooling pooling = Pooling::Mean;
  bool layer_norm = true;  // disabled only in the linear-reduction diagnostic
  int n_variables = 0;     // vocabulary size V
  int d_var = 0;           // 0 selects ceil(log2(V)) + 2
  int d_freq = 0;          // 0 selects ceil(log2(2)) + 2 = 3

  int d_in() const { return 1 + d_var + d_freq; }
  void finalize();  // fills derived dims, checks divisibility constraints
};

// Every trainable tensor of the encoder; biases are column vectors.
struct LayerParams {
  Matrix wq, wk, wv, wo;
  Matrix bq, bk, bv, bo;
  Matrix ln1_g, ln1_b, ln2_g, ln2_b;
  Matrix w1, b1, w2, b2;
};

struct Params {
  Matrix var_table;   // V x d_var
  Matrix freq_table;  // 2 x d_freq
  Matrix w_proj;      // d_model x d_in
  std::vector<LayerParams> layers;
  Matrix head_w;  // d_model x 1
  Matrix head_b;  // 1 x 1
};

// Applies fn(name, tensor) to every parameter tensor, in a fixed order.
void for_each_param(Params& p, const std::function<void(const std::string&, Matrix&)>& fn);
void for_each_param(const Params& p, const std::function<void(const std::string&, const Matrix&)>& fn);

struct EncoderState {
  EncoderConfig config;
  Params params;
  Params grads;
  std::uint64_t dropout_seed = 1;  // stream for inverted-dropout masks
  std::uint64_t dropout_draws = 0;

  void zero_grads();
  std::uint64_t parameter_checksum() const;
};

EncoderState init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Per-layer, per-head row-stochastic attention weights captured during one
// forward pass, with the token-to-(variable, lag) index maps needed for
// aggregation. Empty (with no_attention set) for AB2 models.
struct AttentionRecord {
  std::vector<std::vector<Matrix>> weights;  // [layer][head], L x L
  std::vector<int> variable_ids;
  std::vector<std::int64_t> lags;  // context_end - token timestamp
  bool no_attention = false;
};

// Interleaved sinusoidal temporal encoding; d_model must be even.
Vector temporal_encoding(std::int64_t t, int d_model);

// Tokens for every unmasked observation with timestamp in
// (as_of - window_periods, as_of] (month units; low-frequency rows sit at
// their period-end month). Sorted by timestamp with low-frequency tokens
// first among ties, then ingestion order.
TokenSequence build_sequence(const panels::Panel& high, const panels::Panel& low,
                             int window_periods, std::int64_t as_of_month,
                             const Ablations& ablations, int r = 3,
                             std::optional<std::int64_t> sample_start_month = std::nullopt);

// phi = [r*, e_var, e_freq]; h = W_proj phi; z = h + TE(t) unless AB4.
Matrix embed_tokens(const TokenSequence& seq, const EncoderState& state);

enum class Mode { Train, Eval };

struct ForwardResult {
  double prediction = 0.0;
  Matrix encoding;  // L x d_model
  AttentionRecord record;
};

ForwardResult encoder_forward(const TokenSequence& seq, EncoderState& state, Mode mode,
                              bool capture_attention = false);

double predict(const TokenSequence& seq, EncoderState& state);

// Mean squared error over the batch plus gradients for every parameter,
// accumulated into state.grads via reverse-mode differentiation.
double loss_and_gradients(const std::vector<std::pair<TokenSequence, double>>& batch,
                          EncoderState& state, Mode mode = Mode::Train);

struct TrainHyper {
  double lr = 1e-3;
  int batch_size = 16;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  bool improved = false;
};

struct TrainResult {
  EncoderState state;  // best validation parameters
  std::vector<EpochLog> history;
  double best_val_mse = 0.0;
  int best_epoch = -1;
};

using Dataset = std::vector<std::pair<TokenSequence, double>>;

TrainResult train(const Dataset& train_set, const Dataset& val_set, const EncoderConfig& config,
                  const TrainHyper& hyper);

// Seeded uniform random search over a discrete hyperparameter space;
// objective is validation MSE of a full training run.
struct SearchSpace {
  std::vector<int> d_model{16, 24, 32};
  std::vector<int> n_head{1, 2, 4};
  std::vector<int> n_layers{1, 2};
  std::vector<double> dropout{0.0, 0.05, 0.1};
  std::vector<double> lr{3e-4, 1e-3, 3e-3};
  std::vector<int> d_ff{32, 64};
  std::vector<nn::Activation> activation{nn::Activation::Relu, nn::Activation::Gelu};
};

struct TrialLog {
  int trial = 0;
  EncoderConfig config;
  TrainHyper hyper;
  double val_mse = 0.0;
};

struct SearchResult {
  EncoderConfig best_config;
  TrainHyper best_hyper;
  double best_val_mse = 0.0;
  std::vector<TrialLog> trials;
};

SearchResult random_search(const SearchSpace& space, int n_trials, std::uint64_t seed,
                           const Dataset& train_set, const Dataset& val_set,
                           const EncoderConfig& base_config, const TrainHyper& base_hyper);

// Token-level attention aggregated over records, layers and heads (equal
// weights), then row-normalized. variable_matrix is V x V by (query variable,
// key variable); temporal_matrix is W x W by (query lag, key lag).
struct HeatmapResult {
  Matrix variable_matrix;
  Matrix temporal_matrix;
  bool no_attention = false;
};

HeatmapResult extract_attention_heatmaps(const std::vector<AttentionRecord>& records,
                                         int n_variables, int window_periods);

// Principal angle (radians) between the bottleneck span of a gradient-trained
// linear autoencoder (single layer, identity activation, no dropout, no
// normalization) and the top-k PCA subspace of z_tilde.
double linear_reduction_check(const Matrix& z_tilde, int k, std::uint64_t seed = 1);

// Textual checkpoint: one JSON header line plus named CSV parameter blocks.
void save_checkpoint(const std::filesystem::path& path, const EncoderState& state);
EncoderState load_checkpoint(const std::filesystem::path& path);

}  // namespace attnfactor::enc

#endif
