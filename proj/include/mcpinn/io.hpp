#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mcpinn/net.hpp"

// Artifact plumbing: exact-round-trip number formatting, CSV assembly,
// atomic file writes, a content hash for config echoes, and the parameter
// checkpoint format.

namespace mcpinn {

// Shortest decimal form that parses back to the same bits.
inline std::string format_double(double x) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

// Rows are finished explicitly, so schemas stay visible at the call site.
class CsvBuilder {
 public:
  CsvBuilder& field(std::string_view s) {
    if (line_open_) buf_ += ',';
    buf_.append(s);
    line_open_ = true;
    return *this;
  }
  CsvBuilder& field(double x) { return field(format_double(x)); }
  CsvBuilder& field(std::int64_t v) { return field(std::string_view(std::to_string(v))); }
  CsvBuilder& field(int v) { return field(static_cast<std::int64_t>(v)); }
  void end_row() {
    buf_ += '\n';
    line_open_ = false;
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
  bool line_open_ = false;
};

// Write-then-rename, so readers never observe a partial file.
inline void atomic_write_text(const std::filesystem::path& path, std::string_view content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// SHA-1, used for the manifest's content hash of the config. Standard
// single-shot implementation; inputs here are tiny.
// ---------------------------------------------------------------------------

inline std::string sha1_hex(std::string_view data) {
  std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};

  std::vector<unsigned char> msg(data.begin(), data.end());
  const std::uint64_t bit_len = static_cast<std::uint64_t>(msg.size()) * 8;
  msg.push_back(0x80);
  while (msg.size() % 64 != 56) msg.push_back(0x00);
  for (int i = 7; i >= 0; --i) msg.push_back(static_cast<unsigned char>(bit_len >> (8 * i)));

  auto rotl = [](std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); };
  std::uint32_t w[80];
  for (std::size_t chunk = 0; chunk < msg.size(); chunk += 64) {
    for (int i = 0; i < 16; ++i) {
      w[i] = (static_cast<std::uint32_t>(msg[chunk + 4 * i]) << 24) |
             (static_cast<std::uint32_t>(msg[chunk + 4 * i + 1]) << 16) |
             (static_cast<std::uint32_t>(msg[chunk + 4 * i + 2]) << 8) |
             static_cast<std::uint32_t>(msg[chunk + 4 * i + 3]);
    }
    for (int i = 16; i < 80; ++i) w[i] = rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const std::uint32_t tmp = rotl(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rotl(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  char hex[41];
  for (int i = 0; i < 5; ++i) std::snprintf(hex + 8 * i, 9, "%08x", h[i]);
  return std::string(hex, 40);
}

// Hash of the config text in git's blob form, so the manifest entry can be
// cross-checked with `git hash-object` on the original file.
inline std::string git_blob_sha1(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

inline std::string iso8601_utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Parameter checkpoints. Text format, one value per line in exact round-trip
// form, preceded by the network shape and the trainable-coefficient flags:
//
//   mcpinn-checkpoint v1
//   input_dim 2
//   hidden 64 64 64 64
//   activation tanh
//   output_dim 1
//   trainable 0 0 0 0        (alpha, gamma, c flags; trailing value = dim of v)
//   n_params 12929
//   <n_params lines of values>
// ---------------------------------------------------------------------------

struct CheckpointData {
  NetworkSpec spec;
  bool train_alpha = false;
  bool train_gamma = false;
  bool train_c = false;
  int train_v_dim = 0;
  AlignedBuffer values;
};

inline std::string render_checkpoint(const NetworkSpec& spec, bool train_alpha,
                                     bool train_gamma, bool train_c, int train_v_dim,
                                     std::span<const double> values) {
  std::string out = "mcpinn-checkpoint v1\n";
  out += "input_dim " + std::to_string(spec.input_dim) + "\n";
  out += "hidden";
  for (int wdt : spec.hidden) out += " " + std::to_string(wdt);
  out += "\n";
  out += "activation " + spec.activation + "\n";
  out += "output_dim " + std::to_string(spec.output_dim) + "\n";
  out += "trainable " + std::to_string(int(train_alpha)) + " " + std::to_string(int(train_gamma)) +
         " " + std::to_string(int(train_c)) + " " + std::to_string(train_v_dim) + "\n";
  out += "n_params " + std::to_string(values.size()) + "\n";
  for (double v : values) {
    out += format_double(v);
    out += '\n';
  }
  return out;
}

inline CheckpointData parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto fail = [](const std::string& what) -> std::runtime_error {
    return std::runtime_error("checkpoint: " + what);
  };

  if (!std::getline(in, line) || line != "mcpinn-checkpoint v1") {
    throw fail("missing or unsupported header");
  }

  CheckpointData ck;
  std::size_t n_params = 0;
  auto expect = [&](const std::string& key) -> std::istringstream {
    if (!std::getline(in, line)) throw fail("truncated before '" + key + "'");
    std::istringstream ls(line);
    std::string got;
    ls >> got;
    if (got != key) throw fail("expected '" + key + "', found '" + got + "'");
    return ls;
  };

  {
    auto ls = expect("input_dim");
    if (!(ls >> ck.spec.input_dim)) throw fail("unreadable input_dim");
  }
  {
    auto ls = expect("hidden");
    ck.spec.hidden.clear();
    int w = 0;
    while (ls >> w) ck.spec.hidden.push_back(w);
  }
  {
    auto ls = expect("activation");
    if (!(ls >> ck.spec.activation)) throw fail("unreadable activation");
  }
  {
    auto ls = expect("output_dim");
    if (!(ls >> ck.spec.output_dim)) throw fail("unreadable output_dim");
  }
  {
    auto ls = expect("trainable");
    int a = 0, g = 0, c = 0;
    if (!(ls >> a >> g >> c >> ck.train_v_dim)) throw fail("unreadable trainable flags");
    ck.train_alpha = a != 0;
    ck.train_gamma = g != 0;
    ck.train_c = c != 0;
  }
  {
    auto ls = expect("n_params");
    if (!(ls >> n_params)) throw fail("unreadable n_params");
  }

  ck.spec.validate();
  const ParamLayout layout =
      make_layout(ck.spec, ck.train_alpha, ck.train_gamma, ck.train_c, ck.train_v_dim);
  if (n_params != static_cast<std::size_t>(layout.total)) {
    throw fail("n_params " + std::to_string(n_params) + " does not match the declared shape (" +
               std::to_string(layout.total) + ")");
  }

  ck.values.resize(n_params);
  for (std::size_t i = 0; i < n_params; ++i) {
    if (!std::getline(in, line)) throw fail("value list truncated at entry " + std::to_string(i));
    const char* b = line.data();
    const char* e = line.data() + line.size();
    const auto res = std::from_chars(b, e, ck.values[i]);
    if (res.ec != std::errc() || res.ptr != e) {
      throw fail("unparseable value at entry " + std::to_string(i));
    }
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                            bool train_alpha, bool train_gamma, bool train_c, int train_v_dim,
                            std::span<const double> values) {
  atomic_write_text(path, render_checkpoint(spec, train_alpha, train_gamma, train_c,
                                            train_v_dim, values));
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_text_file(path));
}

}  // namespace mcpinn
