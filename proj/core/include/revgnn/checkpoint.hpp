#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "revgnn/config_io.hpp"
#include "revgnn/model.hpp"

namespace revgnn {

// Versioned binary container:
//   bytes 0..7   magic "RGNNCKPT"
//   u32          version (1)
//   u32          scalar size in bytes (4 = float, 8 = double)
//   u64          config blob length, followed by key=value\n lines
//   u64          tensor count
//   per tensor:  u32 name length, name bytes, u64 rows, u64 cols, raw data
//   u64          FNV-1a checksum of everything before it
// All integers little-endian. Tensors appear in declared parameter order.

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <class T>
void put_pod(std::string& out, T v) {
  put_bytes(out, &v, sizeof v);
}

template <class T>
T get_pod(const std::string& buf, std::size_t& pos) {
  require(pos + sizeof(T) <= buf.size(), "checkpoint: truncated file");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, const ModelParams<S>& params) {
  std::string buf;
  buf.append("RGNNCKPT");
  detail::put_pod<std::uint32_t>(buf, 1);
  detail::put_pod<std::uint32_t>(buf, sizeof(S));

  std::string config;
  for (const auto& [k, v] : model_config_to_kv(params.cfg, params.num_features,
                                               params.num_edge_features, params.num_outputs))
    config += k + "=" + v + "\n";
  detail::put_pod<std::uint64_t>(buf, config.size());
  buf += config;

  std::uint64_t count = 0;
  for_each_param(params, [&](const Mat<S>&, const std::string&) { ++count; });
  detail::put_pod<std::uint64_t>(buf, count);
  for_each_param(params, [&](const Mat<S>& m, const std::string& name) {
    detail::put_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_pod<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
    detail::put_pod<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
    detail::put_bytes(buf, m.data(), static_cast<std::size_t>(m.bytes()));
  });
  detail::put_pod<std::uint64_t>(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "checkpoint: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(out.good(), "checkpoint: write failed for " + path);
}

template <class S>
ModelParams<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(buf.size() > 8 + 4 + 4 + 8 + 8 + 8, "checkpoint: file too short");

  std::size_t pos = 0;
  require(buf.compare(0, 8, "RGNNCKPT") == 0, "checkpoint: bad magic");
  pos = 8;
  const auto version = detail::get_pod<std::uint32_t>(buf, pos);
  require(version == 1, "checkpoint: unsupported version " + std::to_string(version));
  const auto scalar_size = detail::get_pod<std::uint32_t>(buf, pos);
  require(scalar_size == 4 || scalar_size == 8, "checkpoint: bad scalar size");

  const std::uint64_t stored_sum = [&] {
    std::size_t tail = buf.size() - 8;
    std::size_t p = tail;
    return detail::get_pod<std::uint64_t>(buf, p);
  }();
  require(stored_sum == fnv1a64(buf.data(), buf.size() - 8), "checkpoint: checksum mismatch");

  const auto config_len = detail::get_pod<std::uint64_t>(buf, pos);
  require(pos + config_len <= buf.size(), "checkpoint: truncated config");
  std::map<std::string, std::string> kv;
  {
    const std::string config = buf.substr(pos, config_len);
    pos += config_len;
    std::size_t start = 0;
    while (start < config.size()) {
      const std::size_t end = config.find('\n', start);
      const std::string line = config.substr(start, end - start);
      start = end == std::string::npos ? config.size() : end + 1;
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      require(eq != std::string::npos, "checkpoint: malformed config line");
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  index_t num_features = 0, num_edge = 0, num_outputs = 0;
  ModelConfig cfg = model_config_from_kv(kv, num_features, num_edge, num_outputs);
  ModelParams<S> params = build_model<S>(cfg, num_features, num_edge, num_outputs, 0);

  const auto count = detail::get_pod<std::uint64_t>(buf, pos);
  std::uint64_t seen = 0;
  for_each_param(params, [&](Mat<S>& m, const std::string& name) {
    ++seen;
    const auto name_len = detail::get_pod<std::uint32_t>(buf, pos);
    require(pos + name_len <= buf.size(), "checkpoint: truncated tensor name");
    const std::string stored_name = buf.substr(pos, name_len);
    pos += name_len;
    require(stored_name == name, "checkpoint: tensor order mismatch at " + name);
    const auto rows = static_cast<index_t>(detail::get_pod<std::uint64_t>(buf, pos));
    const auto cols = static_cast<index_t>(detail::get_pod<std::uint64_t>(buf, pos));
    require(rows == m.rows() && cols == m.cols(), "checkpoint: tensor shape mismatch at " + name);
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * scalar_size;
    require(pos + bytes <= buf.size(), "checkpoint: truncated tensor data");
    if (scalar_size == sizeof(S)) {
      std::memcpy(m.data(), buf.data() + pos, bytes);
    } else if (scalar_size == 4) {
      for (index_t i = 0; i < m.size(); ++i) {
        float v;
        std::memcpy(&v, buf.data() + pos + static_cast<std::size_t>(i) * 4, 4);
        m.data()[i] = static_cast<S>(v);
      }
    } else {
      for (index_t i = 0; i < m.size(); ++i) {
        double v;
        std::memcpy(&v, buf.data() + pos + static_cast<std::size_t>(i) * 8, 8);
        m.data()[i] = static_cast<S>(v);
      }
    }
    pos += bytes;
  });
  require(seen == count, "checkpoint: tensor count mismatch");
  return params;
}

}  // namespace revgnn
