#include "nonfat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "nonfat/common.hpp"

namespace nonfat {

void RunConfig::validate() const {
  train.validate();
  if (data.empty()) throw ConfigError("config: 'data' is required");
  if (num_modes < 1) throw ConfigError("config: 'num_modes' must be >= 1");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("config: 'train_frac' must be in (0, 1)");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = c.train;
  j["data"] = c.data;
  j["num_modes"] = c.num_modes;
  j["train_frac"] = c.train_frac;
  j["output_dir"] = c.output_dir;
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  nlohmann::json rest = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "data") c.data = value.get<std::string>();
      else if (key == "num_modes") {
        if (!value.is_number_integer() || value.get<long long>() < 1) throw ConfigError("expected a positive integer");
        c.num_modes = value.get<std::size_t>();
      } else if (key == "train_frac") c.train_frac = value.get<double>();
      else if (key == "output_dir") c.output_dir = value.get<std::string>();
      else rest[key] = value;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
  }
  from_json(rest, c.train);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  if (!c.data.empty() && std::filesystem::path(c.data).is_relative()) {
    c.data = (path.parent_path() / c.data).lexically_normal().string();
  }
  return c;
}

void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json j = c;
  j[key] = value;
  RunConfig updated;
  from_json(j, updated);
  c = updated;
}

namespace {

constexpr char kMagic[8] = {'N', 'O', 'N', 'F', 'A', 'T', 'C', 'K'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint: truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

nlohmann::json meta_json(const TensorMeta& m) {
  return {{"num_modes", m.num_modes}, {"dims", m.dims}, {"time_min", m.time_min}, {"time_max", m.time_max}};
}

TensorMeta meta_from(const nlohmann::json& j) {
  TensorMeta m;
  j.at("num_modes").get_to(m.num_modes);
  j.at("dims").get_to(m.dims);
  j.at("time_min").get_to(m.time_min);
  j.at("time_max").get_to(m.time_max);
  return m;
}

}  // namespace

std::string serialize(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : c.params.tensors()) {
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"lower", t.lower}});
  }
  const nlohmann::json header = {{"format_version", kCheckpointVersion},
                                 {"config", c.config},
                                 {"norm_stats", c.stats},
                                 {"meta", meta_json(c.meta)},
                                 {"shape", c.params.shape()},
                                 {"tensors", tensors},
                                 {"summary", c.summary}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : c.params.tensors()) {
    for (Index r = 0; r < t.value.rows(); ++r) {
      for (Index col = 0; col < t.value.cols(); ++col) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.value(r, col)));
    }
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic (not a checkpoint file)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto length = get_le<std::uint64_t>(bytes, pos);
  if (length > bytes.size() - pos) throw DataError("checkpoint: truncated header");
  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(pos, length));
    pos += length;
    if (header.at("format_version").get<std::uint32_t>() != version) throw DataError("checkpoint: version mismatch");
    c.config = header.at("config").get<RunConfig>();
    c.stats = header.at("norm_stats").get<NormStats>();
    c.meta = meta_from(header.at("meta"));
    c.params = NonfatParams(header.at("shape").get<ModelShape>());
    c.summary = header.at("summary");
    const auto& tensors = header.at("tensors");
    if (tensors.size() != c.params.tensors().size()) throw DataError("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& t = c.params.tensors()[i];
      const auto& d = tensors[i];
      if (d.at("name").get<std::string>() != t.name || d.at("rows").get<Index>() != t.value.rows() ||
          d.at("cols").get<Index>() != t.value.cols() || d.at("lower").get<bool>() != t.lower) {
        throw DataError("checkpoint: tensor " + std::to_string(i) + " does not match the model layout");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid header: ") + e.what());
  }
  for (auto& t : c.params.tensors()) {
    for (Index r = 0; r < t.value.rows(); ++r) {
      for (Index col = 0; col < t.value.cols(); ++col) t.value(r, col) = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
    }
  }
  if (pos != bytes.size()) throw DataError("checkpoint: trailing bytes after payload");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::string bytes = serialize(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace nonfat
