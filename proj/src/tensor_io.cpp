#include "storyboard/tensor_io.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "storyboard/errors.hpp"

namespace storyboard {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are written in host order, which must be little-endian");

void write_tensor(std::ostream& os, const Tensor& t) {
  nlohmann::ordered_json header;
  header["shape"] = t.shape();
  header["dtype"] = "f32";
  header["order"] = "row-major";
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!os) throw Error("write_tensor: stream write failed");
}

Tensor read_tensor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("read_tensor: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("read_tensor: bad header: ") + e.what());
  }
  if (header.value("dtype", "") != "f32" || header.value("order", "") != "row-major" ||
      !header.contains("shape") || !header["shape"].is_array()) {
    throw ParseError("read_tensor: unsupported header " + line);
  }
  Shape shape = header["shape"].get<Shape>();
  std::vector<float> data(shape_numel(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (static_cast<std::size_t>(is.gcount()) != data.size() * sizeof(float)) {
    throw ParseError("read_tensor: truncated payload for shape " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace storyboard
