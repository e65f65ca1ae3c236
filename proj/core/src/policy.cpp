#include "hl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hl::policy {

namespace {

constexpr int kMinVocab = 4;
constexpr int kMaxVocab = 64;

std::size_t checked_table_rows(int vocab_size, int order) {
  // V^order, rejecting tables that would not fit comfortably in memory.
  std::size_t rows = 1;
  for (int i = 0; i < order; ++i) {
    if (rows > (std::size_t{1} << 28) / static_cast<std::size_t>(vocab_size)) {
      throw std::invalid_argument("Policy: state table too large for this vocab/order");
    }
    rows *= static_cast<std::size_t>(vocab_size);
  }
  return rows;
}

}  // namespace

// ============================================================================
// Vocabulary / Sequence
// ============================================================================

Vocabulary::Vocabulary(int size_, int bos_, int eos_) : size(size_), bos(bos_), eos(eos_) {
  if (size < kMinVocab || size > kMaxVocab) {
    throw std::invalid_argument("Vocabulary: size must be in [4, 64]");
  }
  if (!valid_id(bos) || !valid_id(eos) || bos == eos) {
    throw std::invalid_argument("Vocabulary: bos/eos must be distinct valid ids");
  }
}

void validate_sequence(const Vocabulary& vocab, const Sequence& seq, int max_len) {
  for (int t : seq.context) {
    if (!vocab.valid_id(t)) throw std::invalid_argument("Sequence: invalid context token id");
    if (t == vocab.eos || t == vocab.bos) {
      throw std::invalid_argument("Sequence: context must not contain bos/eos");
    }
  }
  const auto& y = seq.output;
  if (y.empty()) throw std::invalid_argument("Sequence: output must not be empty");
  if (static_cast<int>(y.size()) > max_len) {
    throw std::invalid_argument("Sequence: output exceeds max length");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!vocab.valid_id(y[i])) throw std::invalid_argument("Sequence: invalid output token id");
    if (y[i] == vocab.bos) throw std::invalid_argument("Sequence: output must not contain bos");
    const bool last = (i + 1 == y.size());
    if ((y[i] == vocab.eos) != last) {
      throw std::invalid_argument("Sequence: output must end with eos and contain it only there");
    }
  }
}

// ============================================================================
// Policy
// ============================================================================

Policy::Policy(const Vocabulary& vocab, int order)
    : vocab_(vocab.size, vocab.bos, vocab.eos), order_(order) {
  if (order_ < 1) throw std::invalid_argument("Policy: order must be >= 1");
  num_states_ = checked_table_rows(vocab_.size, order_);
  logits_.assign(num_states_ * static_cast<std::size_t>(vocab_.size), 0.0);
}

Policy Policy::random(const Vocabulary& vocab, int order, double sigma, rng::Stream& stream) {
  Policy p(vocab, order);
  for (double& l : p.logits_) l = sigma * stream.normal();
  return p;
}

void Policy::row_log_probs(std::size_t state, std::span<double> out) const {
  const int v = vocab_.size;
  const double* row = logits_.data() + state * static_cast<std::size_t>(v);
  double mx = row[0];
  for (int i = 1; i < v; ++i) mx = std::max(mx, row[i]);
  double sum = 0.0;
  for (int i = 0; i < v; ++i) sum += std::exp(row[i] - mx);
  const double lse = mx + std::log(sum);
  for (int i = 0; i < v; ++i) out[i] = row[i] - lse;
}

void Policy::load_params(const Policy& other) {
  if (other.vocab_.size != vocab_.size || other.vocab_.bos != vocab_.bos ||
      other.vocab_.eos != vocab_.eos || other.order_ != order_) {
    throw std::invalid_argument("load_params: shape mismatch");
  }
  logits_ = other.logits_;
}

void Policy::perturb(double sigma, rng::Stream& stream) {
  for (double& l : logits_) l += sigma * stream.normal();
}

// ============================================================================
// StateWalker
// ============================================================================

StateWalker::StateWalker(const Vocabulary& vocab, int order)
    : vocab_size_(vocab.size), window_(static_cast<std::size_t>(order), vocab.bos) {
  high_base_ = 1;
  for (int i = 0; i < order - 1; ++i) high_base_ *= static_cast<std::size_t>(vocab_size_);
  // All-bos start state: bos * (1 + V + ... + V^(order-1)).
  state_ = 0;
  std::size_t base = 1;
  for (int i = 0; i < order; ++i) {
    state_ += static_cast<std::size_t>(vocab.bos) * base;
    base *= static_cast<std::size_t>(vocab_size_);
  }
}

void StateWalker::push(int token) {
  // Dropping the oldest slot and appending the newest is one subtract, one
  // divide, one add on the positional encoding.
  const int oldest = window_[head_];
  window_[head_] = token;
  head_ = (head_ + 1) % window_.size();
  state_ -= static_cast<std::size_t>(oldest);
  state_ /= static_cast<std::size_t>(vocab_size_);
  state_ += static_cast<std::size_t>(token) * high_base_;
}

void StateWalker::push_all(std::span<const int> tokens) {
  for (int t : tokens) push(t);
}

// ============================================================================
// Scoring and sampling
// ============================================================================

std::vector<std::size_t> output_states(const Policy& pol, const Sequence& seq) {
  validate_sequence(pol.vocab(), seq, std::numeric_limits<int>::max());
  StateWalker walker(pol.vocab(), pol.order());
  walker.push_all(seq.context);
  std::vector<std::size_t> states;
  states.reserve(seq.output.size());
  for (int t : seq.output) {
    states.push_back(walker.state());
    walker.push(t);
  }
  return states;
}

std::vector<double> log_prob(const Policy& pol, const Sequence& seq) {
  const auto states = output_states(pol, seq);
  const int v = pol.vocab().size;
  std::vector<double> row(static_cast<std::size_t>(v));
  std::vector<double> out;
  out.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    pol.row_log_probs(states[i], row);
    out.push_back(row[static_cast<std::size_t>(seq.output[i])]);
  }
  return out;
}

namespace {

struct NucleusRow {
  std::vector<int> tokens;    // kept ids, probability-sorted
  std::vector<double> probs;  // renormalized over the kept set
};

NucleusRow nucleus_row(const Policy& pol, std::size_t state, double temperature,
                       double top_p) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample: temperature must be > 0");
  if (!(top_p > 0.0) || top_p > 1.0) throw std::invalid_argument("sample: top_p must be in (0, 1]");

  const int v = pol.vocab().size;
  std::vector<double> scaled(static_cast<std::size_t>(v));
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < v; ++i) mx = std::max(mx, pol.logit(state, i));
  double sum = 0.0;
  for (int i = 0; i < v; ++i) {
    scaled[i] = std::exp((pol.logit(state, i) - mx) / temperature);
    sum += scaled[i];
  }
  for (double& p : scaled) p /= sum;

  std::vector<int> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scaled[a] > scaled[b]; });

  // Smallest probability-sorted prefix reaching top_p; the tiny slack absorbs
  // rounding when the cumulative lands exactly on the threshold.
  NucleusRow out;
  double cum = 0.0;
  for (int id : order) {
    out.tokens.push_back(id);
    out.probs.push_back(scaled[id]);
    cum += scaled[id];
    if (cum >= top_p - 1e-12) break;
  }
  for (double& p : out.probs) p /= cum;
  return out;
}

}  // namespace

std::vector<int> nucleus_set(const Policy& pol, std::size_t state, double temperature,
                             double top_p) {
  return nucleus_row(pol, state, temperature, top_p).tokens;
}

Sequence sample(const Policy& pol, std::span<const int> context, double temperature,
                double top_p, rng::Stream& stream, int max_len) {
  if (max_len < 1) throw std::invalid_argument("sample: max_len must be >= 1");
  const Vocabulary& vocab = pol.vocab();
  for (int t : context) {
    if (!vocab.valid_id(t) || t == vocab.bos || t == vocab.eos) {
      throw std::invalid_argument("sample: invalid context token");
    }
  }

  Sequence seq;
  seq.context.assign(context.begin(), context.end());
  StateWalker walker(vocab, pol.order());
  walker.push_all(context);

  while (true) {
    if (static_cast<int>(seq.output.size()) == max_len - 1) {
      seq.output.push_back(vocab.eos);  // length cap reached: force termination
      break;
    }
    const NucleusRow row = nucleus_row(pol, walker.state(), temperature, top_p);
    const double u = stream.uniform01();
    double cum = 0.0;
    int drawn = row.tokens.back();
    for (std::size_t i = 0; i < row.tokens.size(); ++i) {
      cum += row.probs[i];
      if (u < cum) {
        drawn = row.tokens[i];
        break;
      }
    }
    if (drawn == vocab.bos) {
      // bos carries no mass in practice, but a sampled bos would corrupt the
      // state stream, so remap it to eos.
      drawn = vocab.eos;
    }
    seq.output.push_back(drawn);
    if (drawn == vocab.eos) break;
    walker.push(drawn);
  }
  return seq;
}

// ============================================================================
// Gradients
// ============================================================================

GradTape::GradTape(const Policy& pol)
    : rows(pol.num_states()),
      cols(pol.vocab().size),
      grad(pol.num_states() * static_cast<std::size_t>(pol.vocab().size), 0.0) {}

void GradTape::zero() { std::fill(grad.begin(), grad.end(), 0.0); }

void GradTape::axpy(double scale, const GradTape& other) {
  if (other.rows != rows || other.cols != cols) {
    throw std::invalid_argument("GradTape::axpy: shape mismatch");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += scale * other.grad[i];
}

double GradTape::squared_norm() const {
  double s = 0.0;
  for (double g : grad) s += g * g;
  return s;
}

void accumulate_log_prob_grad(const Policy& pol, const Sequence& seq,
                              std::span<const double> weights,
                              std::span<const std::uint8_t> detach_mask,
                              GradTape& tape) {
  const auto states = output_states(pol, seq);
  if (weights.size() != states.size()) {
    throw std::invalid_argument("log_prob_grad: weights length mismatch");
  }
  if (!detach_mask.empty() && detach_mask.size() != states.size()) {
    throw std::invalid_argument("log_prob_grad: mask length mismatch");
  }
  if (tape.rows != pol.num_states() || tape.cols != pol.vocab().size) {
    throw std::invalid_argument("log_prob_grad: tape shape mismatch");
  }

  const int v = pol.vocab().size;
  std::vector<double> logp(static_cast<std::size_t>(v));
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!detach_mask.empty() && detach_mask[i]) continue;
    const double w = weights[i];
    if (w == 0.0) continue;
    pol.row_log_probs(states[i], logp);
    double* row = tape.grad.data() + states[i] * static_cast<std::size_t>(v);
    for (int j = 0; j < v; ++j) row[j] -= w * std::exp(logp[j]);
    row[seq.output[i]] += w;
  }
}

GradTape log_prob_grad(const Policy& pol, const Sequence& seq,
                       std::span<const double> weights,
                       std::span<const std::uint8_t> detach_mask) {
  GradTape tape(pol);
  accumulate_log_prob_grad(pol, seq, weights, detach_mask, tape);
  return tape;
}

// ============================================================================
// Checkpoints
// ============================================================================

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
  // Host is little-endian on every supported target; byte copy is exact.
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const Policy& pol, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pol.vocab().size));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pol.vocab().bos));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pol.vocab().eos));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pol.order()));
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(pol.num_states()));
  const auto logits = pol.logits();
  out.write(reinterpret_cast<const char*>(logits.data()),
            static_cast<std::streamsize>(logits.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

Policy load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic (not an HLPOL1 file)");
  }
  const auto vsize = read_le<std::uint32_t>(in);
  const auto bos = read_le<std::uint32_t>(in);
  const auto eos = read_le<std::uint32_t>(in);
  const auto order = read_le<std::uint32_t>(in);
  const auto rows = read_le<std::uint64_t>(in);

  Vocabulary vocab(static_cast<int>(vsize), static_cast<int>(bos), static_cast<int>(eos));
  Policy pol(vocab, static_cast<int>(order));
  if (pol.num_states() != rows) {
    throw std::runtime_error("checkpoint: row count inconsistent with vocab/order");
  }
  auto logits = pol.mutable_logits();
  in.read(reinterpret_cast<char*>(logits.data()),
          static_cast<std::streamsize>(logits.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated logits");
  char extra;
  if (in.read(&extra, 1)) throw std::runtime_error("checkpoint: trailing bytes");
  return pol;
}

}  // namespace hl::policy
