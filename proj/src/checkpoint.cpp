#include <cmath>
#include <fstream>
#include <sstream>

#include "binary.hpp"
#include "defa/pipeline.hpp"

namespace defa {

namespace bin {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "' for reading");
  }
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) {
    throw FormatError(FormatError::Kind::kIo, "read error on '" + path + "'");
  }
  return os.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "' for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) {
    throw FormatError(FormatError::Kind::kIo, "write error on '" + path + "'");
  }
}

}  // namespace bin

namespace {

constexpr std::uint32_t kCheckpointVersion = 2;

}  // namespace

std::string encode_checkpoint(const Model& model, const RunConfig& config) {
  RunConfig cfg = config;
  cfg.model = model.config();
  cfg.weights = model.weights();
  auto header = cfg.to_map();
  header["num_attrs"] = std::to_string(model.num_attrs());
  header["num_objs"] = std::to_string(model.num_objs());
  const std::string text = format_key_values(header);

  const auto& entries = model.params().entries();
  std::string out = "DEFA";
  bin::put_u32(out, kCheckpointVersion);
  bin::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  bin::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& e : entries) {
    bin::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    bin::put_u32(out, e.trainable ? 1u : 0u);
    bin::put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
    bin::put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      bin::put_f64(out, e.value.data()[i]);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  bin::Reader r(bytes);
  if (r.bytes(4, "magic") != "DEFA") {
    throw FormatError(FormatError::Kind::kBadMagic, "checkpoint: bad magic");
  }
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      "checkpoint: unsupported version " + std::to_string(v));
  }
  const std::uint32_t count = r.u32("tensor count");
  const std::uint32_t header_len = r.u32("header length");
  const std::string header_text(r.bytes(header_len, "header"));

  std::map<std::string, std::string> header;
  try {
    header = parse_key_values(header_text);
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kSyntax, std::string("checkpoint header: ") + e.what());
  }
  auto take_int = [&header](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) {
      throw FormatError(FormatError::Kind::kMissingEntry,
                        std::string("checkpoint header lacks '") + key + "'");
    }
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::kSyntax, std::string("checkpoint: bad ") + key);
    }
    header.erase(it);
    return v;
  };
  const int num_attrs = take_int("num_attrs");
  const int num_objs = take_int("num_objs");
  RunConfig cfg;
  try {
    cfg.apply(header);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kSyntax, std::string("checkpoint config: ") + e.what());
  }

  ParamStore store;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32("tensor name length");
    const std::string name(r.bytes(name_len, "tensor name"));
    const std::uint32_t flags = r.u32("tensor flags");
    const std::uint32_t rows = r.u32("tensor rows");
    const std::uint32_t cols = r.u32("tensor cols");
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (n * 8 > r.remaining()) {
      throw FormatError(FormatError::Kind::kTruncated, "checkpoint: tensor '" + name +
                                                           "' runs past the end of the file");
    }
    Matrix m(rows, cols);
    for (std::uint64_t i = 0; i < n; ++i) {
      const double v = r.f64("tensor data");
      if (!std::isfinite(v)) {
        throw FormatError(FormatError::Kind::kNonFinite,
                          "checkpoint: non-finite value in '" + name + "'");
      }
      m.data()[i] = v;
    }
    if (store.contains(name)) {
      throw FormatError(FormatError::Kind::kDuplicateId, "checkpoint: duplicate tensor " + name);
    }
    store.add(name, std::move(m), flags != 0);
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::kTrailingBytes,
                      "checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  try {
    Model model(cfg.model, cfg.weights, num_attrs, num_objs, std::move(store));
    return Checkpoint{cfg, std::move(model)};
  } catch (const DimensionError& e) {
    throw FormatError(FormatError::Kind::kSizeMismatch, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Model& model, const RunConfig& config) {
  bin::write_file(path, encode_checkpoint(model, config));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(bin::read_file(path));
}

}  // namespace defa
