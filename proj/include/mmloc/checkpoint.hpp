#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmloc/network.hpp"

namespace mmloc {

// Checkpoint container:
//   8 bytes   magic "MMLOCCKP"
//   u32 LE    container version (1)
//   u64 LE    header length in bytes
//   header    JSON: version_tag, widths, arrays [{name, count}] in payload order
//   payload   float64 LE values of every array, back to back
inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'L', 'O', 'C', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json widths_to_json(const WidthConfig& w) {
  return {{"input_channels", w.input_channels}, {"branch448", w.branch448},
          {"branch448_out", w.branch448_out},   {"branch224", w.branch224},
          {"shared_mid", w.shared_mid},         {"branch56", w.branch56},
          {"trunk", w.trunk}};
}

inline WidthConfig widths_from_json(const nlohmann::json& j, WidthConfig w = {}) {
  w.input_channels = j.value("input_channels", w.input_channels);
  w.branch448 = j.value("branch448", w.branch448);
  w.branch448_out = j.value("branch448_out", w.branch448_out);
  w.branch224 = j.value("branch224", w.branch224);
  w.shared_mid = j.value("shared_mid", w.shared_mid);
  w.branch56 = j.value("branch56", w.branch56);
  w.trunk = j.value("trunk", w.trunk);
  return w;
}

namespace detail {

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
  unsigned char b[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(UInt));
}

template <typename UInt>
UInt get_le(std::istream& in) {
  unsigned char b[sizeof(UInt)];
  in.read(reinterpret_cast<char*>(b), sizeof(UInt));
  if (!in) throw Error("checkpoint: unexpected end of file");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(b[i]) << (8 * i);
  return v;
}

// Every array of the model in payload order, as (name, values).
template <typename Params, typename Fn>
void for_each_array(Params& p, Fn&& fn) {
  auto visit = [&](const std::string& prefix, auto& ps) {
    for (auto& c : ps.convs) {
      fn(prefix + c.name + ".weight", c.weight);
      fn(prefix + c.name + ".bias", c.bias);
    }
  };
  for (SizeClass cls : kSizeClasses) visit(std::string(name_of(cls)) + "/", p.branches.at(cls));
  visit("trunk/", p.trunk);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params) {
  nlohmann::json header;
  header["version_tag"] = params.version_tag;
  header["widths"] = widths_to_json(params.widths);
  header["arrays"] = nlohmann::json::array();
  detail::for_each_array(params, [&](const std::string& name, const std::vector<double>& v) {
    header["arrays"].push_back({{"name", name}, {"count", v.size()}});
  });
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::for_each_array(params, [&](const std::string&, const std::vector<double>& v) {
    for (double d : v) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
  });
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

inline ModelParameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error("'" + path.string() + "' is not a checkpoint file");
  }
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported container version " + std::to_string(version));
  }
  const auto header_len = detail::get_le<std::uint64_t>(in);
  if (header_len > (1u << 26)) throw Error("checkpoint: header too large");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: malformed header: ") + e.what());
  }

  ModelParameters params = zero_parameters(widths_from_json(header.at("widths")));
  params.version_tag = header.value("version_tag", "");
  const auto& arrays = header.at("arrays");
  std::size_t idx = 0;
  detail::for_each_array(params, [&](const std::string& name, std::vector<double>& v) {
    if (idx >= arrays.size()) throw Error("checkpoint: missing array '" + name + "'");
    const auto& a = arrays[idx++];
    if (a.at("name").get<std::string>() != name || a.at("count").get<std::size_t>() != v.size()) {
      throw Error("checkpoint: array '" + a.at("name").get<std::string>() +
                  "' does not match the channel plan (expected '" + name + "' with " +
                  std::to_string(v.size()) + " values)");
    }
  });
  if (idx != arrays.size()) throw Error("checkpoint: unexpected extra arrays");
  detail::for_each_array(params, [&](const std::string&, std::vector<double>& v) {
    for (double& d : v) d = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
  });
  return params;
}

}  // namespace mmloc
