#include "fusionkit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fusionkit {

namespace {

constexpr const char* kFormat = "fusionkit-checkpoint";

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open checkpoint manifest in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != kFormat) throw std::runtime_error(dir.string() + " is not a fusionkit checkpoint");
  return j;
}

}  // namespace

void write_f64_le(std::ostream& out, std::span<const double> values) {
  std::vector<char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<double> read_f64_le(std::istream& in, std::size_t count) {
  std::vector<char> buf(count * 8);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw std::runtime_error("float64 blob is truncated");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i * 8 + b])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& config, const ad::ParameterList& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json blocks = nlohmann::json::array();
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  std::size_t offset = 0;
  for (const auto* p : params) {
    blocks.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}, {"count", p->value.size()}});
    write_f64_le(blob, p->value.data());
    offset += p->value.size();
  }
  nlohmann::json manifest = {{"format", kFormat}, {"version", 1},      {"config", config},
                             {"blob", "params.bin"}, {"dtype", "float64-le"}, {"blocks", blocks}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

nlohmann::json read_checkpoint_config(const std::filesystem::path& dir) { return read_manifest(dir).at("config"); }

void load_checkpoint(const std::filesystem::path& dir, const ad::ParameterList& params) {
  const nlohmann::json manifest = read_manifest(dir);
  std::ifstream blob(dir / manifest.at("blob").get<std::string>(), std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open checkpoint blob in " + dir.string());
  std::map<std::string, nlohmann::json> by_name;
  for (const auto& b : manifest.at("blocks")) by_name[b.at("name").get<std::string>()] = b;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint has no block named '" + p->name + "'");
    const auto shape = it->second.at("shape").get<Shape>();
    if (shape != p->value.shape()) {
      throw ShapeError("checkpoint block '" + p->name + "' has shape " + shape_string(shape) + ", model expects " +
                       shape_string(p->value.shape()));
    }
    blob.seekg(static_cast<std::streamoff>(it->second.at("offset").get<std::size_t>() * 8));
    p->value = Tensor(shape, read_f64_le(blob, p->value.size()));
  }
}

}  // namespace fusionkit
