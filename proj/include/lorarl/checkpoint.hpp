#pragma once

// Binary checkpoint container.
//
//   bytes 0..7    magic "LORARLCK"
//   bytes 8..11   format version (uint32, little endian)
//   bytes 12..19  header length H (uint64)
//   next H bytes  JSON header: step, run config + its hash, optimizer step,
//                 data position, tensor directory {name, rows, cols, offset,
//                 sha256}
//   remainder     tensor payloads, column-major float64, at the directory
//                 offsets (relative to the start of the payload section)

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lorarl/config.hpp"
#include "lorarl/error.hpp"
#include "lorarl/hash.hpp"
#include "lorarl/optim.hpp"
#include "lorarl/policy.hpp"

namespace lorarl {

inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'R', 'A', 'R', 'L', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Position in the seeded per-epoch shuffle. All other randomness is derived
// from (master seed, step, question, member) counters, so this plus the
// master seed is the complete RNG state of a run.
struct DataCursor {
  int64_t epoch = 0;
  int64_t cursor = 0;

  friend bool operator==(const DataCursor&, const DataCursor&) = default;
};

struct Checkpoint {
  int64_t step = 0;
  RunConfig config;
  PolicyParams params;
  AdamWState optimizer;
  DataCursor data;
};

namespace detail {

struct TensorRef {
  std::string name;
  const Eigen::MatrixXd* m;
};

inline std::vector<TensorRef> checkpoint_tensors(const Checkpoint& ck) {
  std::vector<TensorRef> out;
  auto& base = const_cast<BaseWeights&>(ck.params.base);
  base.for_each([&](const std::string& n, Eigen::MatrixXd& m) { out.push_back({"base." + n, &m}); });
  auto& ad = const_cast<AdapterSet&>(ck.params.adapters);
  ad.for_each([&](const std::string& n, Eigen::MatrixXd& m) { out.push_back({"adapter." + n, &m}); });
  for (const auto& [n, m] : ck.optimizer.first_moment) out.push_back({"adam.m." + n, &m});
  for (const auto& [n, m] : ck.optimizer.second_moment) out.push_back({"adam.v." + n, &m});
  return out;
}

template <class T>
void put_le(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T get_le(const std::string& buf, size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const auto tensors = detail::checkpoint_tensors(ck);
  std::string payload;
  Json dir = Json::array();
  for (const auto& t : tensors) {
    const size_t bytes = static_cast<size_t>(t.m->size()) * sizeof(double);
    const size_t offset = payload.size();
    payload.append(reinterpret_cast<const char*>(t.m->data()), bytes);
    dir.push_back({{"name", t.name},
                   {"rows", t.m->rows()},
                   {"cols", t.m->cols()},
                   {"offset", offset},
                   {"sha256", sha256_hex(payload.data() + offset, bytes)}});
  }
  Json header;
  header["step"] = ck.step;
  header["config"] = to_json(ck.config);
  header["config_hash"] = config_hash(ck.config);
  header["optimizer_step"] = ck.optimizer.step;
  header["data"] = {{"epoch", ck.data.epoch}, {"cursor", ck.data.cursor}};
  header["tensors"] = dir;
  const std::string h = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<uint32_t>(out, kCheckpointVersion);
  detail::put_le<uint64_t>(out, h.size());
  out += h;
  out += payload;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  auto fail = [&](size_t offset, const std::string& what) -> IntegrityError {
    return IntegrityError(origin + ": " + what + " at byte offset " + std::to_string(offset));
  };
  constexpr size_t kPrefix = sizeof kCheckpointMagic + sizeof(uint32_t) + sizeof(uint64_t);
  if (bytes.size() < kPrefix) throw fail(bytes.size(), "truncated file");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) throw fail(0, "bad magic");
  const auto version = detail::get_le<uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) throw fail(8, "unsupported version " + std::to_string(version));
  const auto hlen = detail::get_le<uint64_t>(bytes, 12);
  if (hlen > bytes.size() - kPrefix) throw fail(12, "header length exceeds file size");
  const size_t payload_start = kPrefix + static_cast<size_t>(hlen);

  Json header;
  try {
    header = Json::parse(bytes.begin() + static_cast<long>(kPrefix),
                         bytes.begin() + static_cast<long>(payload_start));
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(kPrefix + e.byte, "malformed header");
  }

  Checkpoint ck;
  try {
    ck.config = run_config_from_json(header.at("config"));
    ck.step = header.at("step").get<int64_t>();
    ck.optimizer.step = header.at("optimizer_step").get<long>();
    ck.data.epoch = header.at("data").at("epoch").get<int64_t>();
    ck.data.cursor = header.at("data").at("cursor").get<int64_t>();
    if (header.at("config_hash").get<std::string>() != config_hash(ck.config)) {
      throw fail(kPrefix, "config hash does not match the embedded config");
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(kPrefix, std::string("invalid header (") + e.what() + ")");
  } catch (const ConfigError& e) {
    throw fail(kPrefix, std::string("invalid embedded config (") + e.what() + ")");
  }

  // Shapes come from the config; the directory must supply exactly them.
  ck.params.config = ck.config.model;
  ck.params.base = init_base(ck.config.model, 0);
  ck.params.adapters = init_adapters(ck.config.model, ck.config.lora, 0);

  std::map<std::string, Eigen::MatrixXd*> expected;
  ck.params.base.for_each([&](const std::string& n, Eigen::MatrixXd& m) { expected["base." + n] = &m; });
  ck.params.adapters.for_each([&](const std::string& n, Eigen::MatrixXd& m) { expected["adapter." + n] = &m; });

  std::set<std::string> filled;
  for (const auto& entry : header.at("tensors")) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    size_t offset = 0;
    std::string digest;
    try {
      name = entry.at("name").get<std::string>();
      rows = entry.at("rows").get<Eigen::Index>();
      cols = entry.at("cols").get<Eigen::Index>();
      offset = entry.at("offset").get<size_t>();
      digest = entry.at("sha256").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw fail(kPrefix, std::string("invalid tensor directory entry (") + e.what() + ")");
    }
    if (rows < 0 || cols < 0) throw fail(kPrefix, "negative shape for " + name);
    const size_t n = static_cast<size_t>(rows * cols) * sizeof(double);
    const size_t abs = payload_start + offset;
    if (offset > bytes.size() - payload_start || n > bytes.size() - abs) {
      throw fail(abs, "tensor " + name + " extends past end of file");
    }
    if (sha256_hex(bytes.data() + abs, n) != digest) throw fail(abs, "checksum mismatch in tensor " + name);

    Eigen::MatrixXd m(rows, cols);
    std::memcpy(m.data(), bytes.data() + abs, n);
    if (!filled.insert(name).second) throw fail(abs, "duplicate tensor " + name);
    if (name.rfind("adam.m.", 0) == 0) {
      ck.optimizer.first_moment[name.substr(7)] = std::move(m);
    } else if (name.rfind("adam.v.", 0) == 0) {
      ck.optimizer.second_moment[name.substr(7)] = std::move(m);
    } else {
      auto it = expected.find(name);
      if (it == expected.end()) throw fail(abs, "unexpected tensor " + name);
      if (it->second->rows() != rows || it->second->cols() != cols) {
        throw fail(abs, "shape mismatch for tensor " + name);
      }
      *it->second = std::move(m);
    }
  }
  for (const auto& [name, _] : expected) {
    if (!filled.contains(name)) throw fail(kPrefix, "missing tensor " + name);
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace lorarl
