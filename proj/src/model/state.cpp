#include "dncasr/model/state.hpp"

#include "dncasr/common.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace dncasr::model {

void ModelConfig::validate() const {
  if (num_blocks < 1) throw std::invalid_argument("num_blocks must be >= 1");
  if (num_heads < 1) throw std::invalid_argument("num_heads must be >= 1");
  if (hidden < 1 || hidden % num_heads != 0)
    throw std::invalid_argument("hidden must be a positive multiple of num_heads");
  if (ffn < 1) throw std::invalid_argument("ffn must be >= 1");
  if (vocab < 6) throw std::invalid_argument("vocab must include the special tokens");
  if (max_speakers < 1) throw std::invalid_argument("max_speakers must be >= 1");
  if (embed_dim < 1 || frame_dim < 1)
    throw std::invalid_argument("input dims must be >= 1");
  if (max_positions < 4) throw std::invalid_argument("max_positions too small");
}

namespace {

Mat sinusoidal_pe(int positions, int dim) {
  Mat pe(positions, dim);
  for (int p = 0; p < positions; ++p)
    for (int d = 0; d < dim; ++d) {
      double angle = p / std::pow(10000.0, 2.0 * (d / 2) / dim);
      pe(p, d) = (d % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace

Parameter& ModelState::add(const std::string& name, int rows, int cols, bool trainable) {
  Parameter p;
  p.name = name;
  p.value.setZero(rows, cols);
  p.trainable = trainable;
  index_[name] = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

ModelState::ModelState(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  auto rng = std::mt19937_64(mix_seed(seed ^ 0x5157a7eULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto xavier = [&](Parameter& p) {
    double bound = std::sqrt(6.0 / (p.value.rows() + p.value.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (int i = 0; i < p.value.rows(); ++i)
      for (int j = 0; j < p.value.cols(); ++j) p.value(i, j) = u(rng);
  };
  auto gauss = [&](Parameter& p, double sigma) {
    for (int i = 0; i < p.value.rows(); ++i)
      for (int j = 0; j < p.value.cols(); ++j) p.value(i, j) = sigma * normal(rng);
  };

  const int h = config.hidden;
  auto add_attention = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) xavier(add(prefix + "." + w, h, h));
  };
  auto add_ln = [&](const std::string& prefix) {
    add(prefix + ".g", 1, h).value.setOnes();
    add(prefix + ".b", 1, h);
  };
  auto add_ffn = [&](const std::string& prefix) {
    xavier(add(prefix + ".w1", h, config.ffn));
    add(prefix + ".b1", 1, config.ffn);
    xavier(add(prefix + ".w2", config.ffn, h));
    add(prefix + ".b2", 1, h);
  };
  auto add_blocks = [&](const std::string& net, bool cross, bool link) {
    for (int i = 0; i < config.num_blocks; ++i) {
      std::string b = net + ".block" + std::to_string(i);
      add_attention(b + ".self_attn");
      add_ln(b + ".ln1");
      int next_ln = 2;
      if (cross) {
        add_attention(b + ".cross_attn");
        add_ln(b + ".ln" + std::to_string(next_ln++));
      }
      if (link) {
        add_attention(b + ".spk_attn");
        add_ln(b + ".ln" + std::to_string(next_ln++));
        add_attention(b + ".link_attn");
        add_ln(b + ".ln" + std::to_string(next_ln++));
      }
      add_ffn(b + ".ffn");
      add_ln(b + ".ln" + std::to_string(next_ln));
    }
  };

  // Spk encoder
  xavier(add("spk_enc.in_proj.w", config.embed_dim, h));
  add("spk_enc.in_proj.b", 1, h);
  add("spk_enc.pe", config.max_positions, h, false).value =
      sinusoidal_pe(config.max_positions, h);
  add_blocks("spk_enc", false, false);

  // Wav encoder, plus the frame-reconstruction head used as a
  // self-supervised-style auxiliary during pre-training
  xavier(add("wav_enc.in_proj.w", config.frame_dim, h));
  add("wav_enc.in_proj.b", 1, h);
  add("wav_enc.pe", config.max_positions, h, false).value =
      sinusoidal_pe(config.max_positions, h);
  add_blocks("wav_enc", false, false);
  xavier(add("wav_enc.recon.w", h, config.frame_dim));
  add("wav_enc.recon.b", 1, config.frame_dim);

  // ASR decoder (standard: self + wav cross attention)
  gauss(add("asr_dec.embed", config.vocab, h), 0.7);
  add("asr_dec.pe", config.max_positions, h, false).value =
      sinusoidal_pe(config.max_positions, h);
  add_blocks("asr_dec", true, false);
  xavier(add("asr_dec.out_proj.w", h, config.vocab));
  add("asr_dec.out_proj.b", 1, config.vocab);

  // DNC decoder (self + spk cross + link cross); embed row max_speakers is <sbos>
  gauss(add("dnc_dec.embed", config.max_speakers + 1, h), 0.7);
  add("dnc_dec.pe", config.max_positions, h, false).value =
      sinusoidal_pe(config.max_positions, h);
  add_blocks("dnc_dec", false, true);
  // the link fades in from zero when fine-tuning enables it
  for (int i = 0; i < config.num_blocks; ++i)
    at("dnc_dec.block" + std::to_string(i) + ".link_attn.wo").value.setZero();
  xavier(add("dnc_dec.out_proj.w", h, config.max_speakers));
  add("dnc_dec.out_proj.b", 1, config.max_speakers);

  gauss(add("link_pad", 1, h), 0.7);
}

Parameter& ModelState::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

const Parameter& ModelState::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

void ModelState::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

void ModelState::set_trainable_by_prefix(const std::vector<std::string>& prefixes,
                                         bool trainable) {
  for (auto& p : params_) {
    if (p.name.ends_with(".pe")) continue;  // positional tables stay fixed
    for (const auto& pre : prefixes)
      if (p.name.rfind(pre, 0) == 0) p.trainable = trainable;
  }
}

bool ModelState::all_finite() const {
  for (const auto& p : params_)
    if (!p.value.allFinite()) return false;
  return true;
}

namespace {

constexpr char kMagic[4] = {'D', 'N', 'C', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& at) {
  if (at + sizeof(T) > buf.size()) throw std::runtime_error("truncated checkpoint");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

void put_entry_f64(std::string& buf, const std::string& name, const Mat& m) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
  buf.append(name);
  put<std::uint8_t>(buf, 0);  // dtype f64
  put<std::uint8_t>(buf, 2);
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) put<double>(buf, m(i, j));
}

void put_entry_i64(std::string& buf, const std::string& name, std::int64_t v) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
  buf.append(name);
  put<std::uint8_t>(buf, 1);  // dtype i64
  put<std::uint8_t>(buf, 0);  // scalar
  put<std::int64_t>(buf, v);
}

}  // namespace

void ModelState::save(const std::string& path) const {
  std::string buf;
  buf.append(kMagic, 4);
  put<std::uint32_t>(buf, kVersion);
  std::vector<std::pair<std::string, std::int64_t>> cfg = {
      {"__config.num_blocks", config_.num_blocks},
      {"__config.num_heads", config_.num_heads},
      {"__config.hidden", config_.hidden},
      {"__config.ffn", config_.ffn},
      {"__config.vocab", config_.vocab},
      {"__config.max_speakers", config_.max_speakers},
      {"__config.embed_dim", config_.embed_dim},
      {"__config.frame_dim", config_.frame_dim},
      {"__config.max_positions", config_.max_positions},
  };
  put<std::uint64_t>(buf, cfg.size() + params_.size());
  for (const auto& [name, v] : cfg) put_entry_i64(buf, name, v);
  for (const auto& p : params_) put_entry_f64(buf, p.name, p.value);
  write_text_file(path, buf);
}

ModelState ModelState::load(const std::string& path) {
  std::string buf = read_text_file(path);
  std::size_t at = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  at = 4;
  auto version = take<std::uint32_t>(buf, at);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  auto count = take<std::uint64_t>(buf, at);

  std::map<std::string, std::int64_t> cfg_entries;
  std::map<std::string, Mat> tensors;
  for (std::uint64_t e = 0; e < count; ++e) {
    auto name_len = take<std::uint32_t>(buf, at);
    if (at + name_len > buf.size()) throw std::runtime_error("truncated checkpoint");
    std::string name = buf.substr(at, name_len);
    at += name_len;
    auto dtype = take<std::uint8_t>(buf, at);
    auto ndim = take<std::uint8_t>(buf, at);
    if (dtype == 1 && ndim == 0) {
      cfg_entries[name] = take<std::int64_t>(buf, at);
    } else if (dtype == 0 && ndim == 2) {
      auto rows = take<std::uint64_t>(buf, at);
      auto cols = take<std::uint64_t>(buf, at);
      Mat m(static_cast<int>(rows), static_cast<int>(cols));
      for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) m(i, j) = take<double>(buf, at);
      tensors[name] = std::move(m);
    } else {
      throw std::runtime_error("unsupported checkpoint entry: " + name);
    }
  }

  ModelConfig cfg;
  auto want = [&](const char* key) {
    auto it = cfg_entries.find(key);
    if (it == cfg_entries.end())
      throw std::runtime_error(std::string("checkpoint missing ") + key);
    return static_cast<int>(it->second);
  };
  cfg.num_blocks = want("__config.num_blocks");
  cfg.num_heads = want("__config.num_heads");
  cfg.hidden = want("__config.hidden");
  cfg.ffn = want("__config.ffn");
  cfg.vocab = want("__config.vocab");
  cfg.max_speakers = want("__config.max_speakers");
  cfg.embed_dim = want("__config.embed_dim");
  cfg.frame_dim = want("__config.frame_dim");
  cfg.max_positions = want("__config.max_positions");

  ModelState state(cfg, 0);
  for (auto& p : state.params_) {
    auto it = tensors.find(p.name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint missing tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    p.value = it->second;
    tensors.erase(it);
  }
  if (!tensors.empty())
    throw std::runtime_error("checkpoint has unknown tensor " + tensors.begin()->first);
  return state;
}

std::string ModelState::parameter_digest() const {
  std::string bytes;
  for (const auto& p : params_) {
    bytes.append(p.name);
    const char* data = reinterpret_cast<const char*>(p.value.data());
    bytes.append(data, sizeof(double) * p.value.size());
  }
  return hex_digest(bytes);
}

}  // namespace dncasr::model
