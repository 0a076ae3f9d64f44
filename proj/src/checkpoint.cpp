#include "nfr/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "json.hpp"
#include "nfr/error.hpp"

namespace nfr {

namespace {

constexpr const char* kMagic = "NFR1";

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void checkpoint_save(const Network& net, const std::string& path) {
  net.validate();
  nlohmann::ordered_json header;
  header["magic"] = kMagic;
  header["L"] = net.depth();
  header["d"] = net.input_dim();
  header["K"] = net.output_dim();
  header["widths"] = net.hidden_widths();
  header["activation"] = to_string(net.activation);
  header["seed"] = net.seed;

  std::string payload;
  payload.reserve(net.parameter_count() * 8);
  for (const auto& w : net.weights)
    for (double v : w.values()) put_le(payload, v);
  for (double v : net.top.values()) put_le(payload, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

Network checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw FormatError("checkpoint header is not terminated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Network net;
  std::vector<std::size_t> widths;
  std::size_t depth = 0, input_dim = 0, output_dim = 0;
  try {
    if (header.at("magic").get<std::string>() != kMagic) throw FormatError("checkpoint magic/version mismatch");
    depth = header.at("L").get<std::size_t>();
    input_dim = header.at("d").get<std::size_t>();
    output_dim = header.at("K").get<std::size_t>();
    widths = header.at("widths").get<std::vector<std::size_t>>();
    net.activation = parse_activation(header.at("activation").get<std::string>());
    net.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  } catch (const ValueError& e) {
    throw FormatError(e.what());
  }
  if (depth == 0 || widths.size() != depth || input_dim == 0 || output_dim == 0)
    throw FormatError("checkpoint header widths are inconsistent with L, d or K");

  std::size_t count = 0, fan_in = input_dim;
  for (auto w : widths) {
    if (w == 0) throw FormatError("checkpoint header has a zero width");
    count += w * fan_in;
    fan_in = w;
  }
  count += fan_in * output_dim;
  const std::size_t payload = bytes.size() - newline - 1;
  if (payload != count * 8)
    throw FormatError("payload length mismatch: expected " + std::to_string(count * 8) + " bytes, found " +
                      std::to_string(payload));

  const char* p = bytes.data() + newline + 1;
  fan_in = input_dim;
  for (auto w : widths) {
    Matrix m(w, fan_in);
    for (double& v : m.values()) v = get_le(p), p += 8;
    net.weights.push_back(std::move(m));
    fan_in = w;
  }
  net.top = Matrix(fan_in, output_dim);
  for (double& v : net.top.values()) v = get_le(p), p += 8;
  net.validate();
  return net;
}

}  // namespace nfr
