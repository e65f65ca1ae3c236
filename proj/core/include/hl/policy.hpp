#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hl/rng.hpp"

namespace hl::policy {

// ============================================================================
// Types
// ============================================================================

/** Token inventory. Ids are dense in [0, size); bos and eos are reserved ids.
 *  bos never appears in sequences (it is the left-padding/start marker); eos
 *  terminates every output. */
struct Vocabulary {
  int size = 0;
  int bos = 0;
  int eos = 0;

  Vocabulary() = default;
  Vocabulary(int size_, int bos_, int eos_);

  bool valid_id(int t) const { return t >= 0 && t < size; }
};

/** One prompt/response pair in token ids. The output always ends with eos and
 *  contains eos nowhere else. */
struct Sequence {
  std::vector<int> context;
  std::vector<int> output;
};

/** Default cap on output length, counting the terminal eos. */
inline constexpr int kDefaultMaxLen = 16;

/** Throws std::invalid_argument unless seq satisfies the Sequence contract
 *  under vocab (valid ids, 1 <= |output| <= max_len, eos exactly at the end,
 *  no eos/bos inside the context). */
void validate_sequence(const Vocabulary& vocab, const Sequence& seq,
                       int max_len = kDefaultMaxLen);

// ============================================================================
// Tabular autoregressive policy
// ============================================================================

/**
 * Autoregressive softmax policy with an exact table of n-gram context states.
 *
 * The conditioning state for output token t is the window of the last n
 * tokens of [bos-padding, context, output_0..output_{t-1}].  States are
 * indexed positionally (base-vocab encoding), so the table is collision-free;
 * at desk scale (vocab <= 64, n small) the dense table is affordable and
 * keeps gradients exact.
 *
 * Policies are value types: copying clones all parameters bitwise.  A policy
 * used as a frozen reference must simply not be passed to a mutating call;
 * all read paths are const.
 */
class Policy {
 public:
  /** Uniform policy (all logits zero). order >= 1; vocab size in [4, 64]. */
  Policy(const Vocabulary& vocab, int order);

  /** Policy with logits drawn i.i.d. normal(0, sigma) from the stream. */
  static Policy random(const Vocabulary& vocab, int order, double sigma,
                       rng::Stream& stream);

  const Vocabulary& vocab() const { return vocab_; }
  int order() const { return order_; }
  std::size_t num_states() const { return num_states_; }

  std::span<const double> logits() const { return logits_; }
  std::span<double> mutable_logits() { return logits_; }

  double logit(std::size_t state, int token) const {
    return logits_[state * vocab_.size + token];
  }
  void set_logit(std::size_t state, int token, double v) {
    logits_[state * vocab_.size + token] = v;
  }

  /** Log-probabilities of one row, exact log-space softmax with max
   *  subtraction. Writes vocab-size values into out. */
  void row_log_probs(std::size_t state, std::span<double> out) const;

  /** Replace all parameters with those of other. Shapes (vocab, order) must
   *  match exactly or the call throws; the copy is bitwise. */
  void load_params(const Policy& other);

  /** Adds i.i.d. normal(0, sigma) noise to every logit. */
  void perturb(double sigma, rng::Stream& stream);

 private:
  Vocabulary vocab_;
  int order_;
  std::size_t num_states_;
  std::vector<double> logits_;  // num_states_ x vocab_.size, row-major
};

/**
 * Incremental state tracker for walking a (context, output) token stream.
 *
 * Starts from the all-bos window; push() slides the window one token.  The
 * state index is sum_i window[i] * V^i with window[0] the oldest token.
 */
class StateWalker {
 public:
  StateWalker(const Vocabulary& vocab, int order);

  std::size_t state() const { return state_; }
  void push(int token);
  void push_all(std::span<const int> tokens);

 private:
  int vocab_size_;
  std::size_t state_;
  std::size_t high_base_;  // V^(order-1): weight of the newest slot
  std::vector<int> window_;
  std::size_t head_ = 0;
};

// ============================================================================
// Scoring and sampling
// ============================================================================

/** Per-token log-probabilities of seq.output under pol, conditioned on
 *  seq.context. Rejects malformed sequences. */
std::vector<double> log_prob(const Policy& pol, const Sequence& seq);

/** Conditioning state index for each output position of seq. */
std::vector<std::size_t> output_states(const Policy& pol, const Sequence& seq);

/**
 * Ancestral sampling with temperature and nucleus truncation.
 *
 * temperature > 0 rescales logits before the softmax; top_p in (0, 1] keeps
 * the smallest probability-sorted prefix whose cumulative mass reaches top_p
 * (ties broken by token id) and renormalizes.  Generation stops at eos; if
 * max_len - 1 tokens are drawn without eos, eos is appended so every output
 * terminates within max_len tokens.
 */
Sequence sample(const Policy& pol, std::span<const int> context, double temperature,
                double top_p, rng::Stream& stream, int max_len = kDefaultMaxLen);

/** Probability-sorted nucleus for one state: token ids whose renormalized
 *  probabilities sampling may draw. Exposed for direct inspection in tests. */
std::vector<int> nucleus_set(const Policy& pol, std::size_t state, double temperature,
                             double top_p);

// ============================================================================
// Gradients
// ============================================================================

/**
 * Dense per-parameter gradient accumulator aligned with a Policy's logits.
 *
 * The detach mask recorded by accumulate_log_prob_grad marks output positions
 * whose contribution was skipped; masked positions add exactly zero to every
 * cell.
 */
struct GradTape {
  std::size_t rows = 0;
  int cols = 0;
  std::vector<double> grad;  // rows x cols, row-major

  explicit GradTape(const Policy& pol);

  double at(std::size_t state, int token) const { return grad[state * cols + token]; }
  void zero();
  /** this += scale * other; shapes must match. */
  void axpy(double scale, const GradTape& other);
  double squared_norm() const;
};

/**
 * Accumulates d/d(logits) of sum_t weights[t] * log pi(output[t] | state_t)
 * into tape, skipping positions where detach_mask[t] is true.
 *
 * The per-position contribution to row state_t is
 *   weights[t] * (onehot(output[t]) - softmax(logits[state_t])),
 * the exact softmax-cross-entropy gradient.  weights and detach_mask must
 * match the output length (detach_mask may be empty = nothing detached).
 */
void accumulate_log_prob_grad(const Policy& pol, const Sequence& seq,
                              std::span<const double> weights,
                              std::span<const std::uint8_t> detach_mask,
                              GradTape& tape);

/** Convenience wrapper returning a fresh tape. */
GradTape log_prob_grad(const Policy& pol, const Sequence& seq,
                       std::span<const double> weights,
                       std::span<const std::uint8_t> detach_mask = {});

// ============================================================================
// Checkpoints
// ============================================================================

/** Binary checkpoint format tag. Layout after the 6-byte magic: u32 vocab
 *  size, u32 bos, u32 eos, u32 order, u64 row count, f64 logits row-major,
 *  all little-endian. */
inline constexpr char kCheckpointMagic[6] = {'H', 'L', 'P', 'O', 'L', '1'};

void save_checkpoint(const Policy& pol, const std::string& path);

/** Loads a checkpoint; throws std::runtime_error on bad magic, truncation, or
 *  shape inconsistencies. The loaded parameters are bitwise-equal to what was
 *  saved. */
Policy load_checkpoint(const std::string& path);

}  // namespace hl::policy
