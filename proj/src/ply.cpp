#include "mmpcqa/ply.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

namespace mmpcqa {

namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

enum class ScalarType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<ScalarType> scalar_type(const std::string& name) {
  if (name == "char" || name == "int8") return ScalarType::i8;
  if (name == "uchar" || name == "uint8") return ScalarType::u8;
  if (name == "short" || name == "int16") return ScalarType::i16;
  if (name == "ushort" || name == "uint16") return ScalarType::u16;
  if (name == "int" || name == "int32") return ScalarType::i32;
  if (name == "uint" || name == "uint32") return ScalarType::u32;
  if (name == "float" || name == "float32") return ScalarType::f32;
  if (name == "double" || name == "float64") return ScalarType::f64;
  return std::nullopt;
}

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::i8:
    case ScalarType::u8: return 1;
    case ScalarType::i16:
    case ScalarType::u16: return 2;
    case ScalarType::i32:
    case ScalarType::u32:
    case ScalarType::f32: return 4;
    case ScalarType::f64: return 8;
  }
  return 0;
}

template <typename V>
V load(const char* p) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  return v;
}

double decode(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::i8: return load<std::int8_t>(p);
    case ScalarType::u8: return load<std::uint8_t>(p);
    case ScalarType::i16: return load<std::int16_t>(p);
    case ScalarType::u16: return load<std::uint16_t>(p);
    case ScalarType::i32: return load<std::int32_t>(p);
    case ScalarType::u32: return load<std::uint32_t>(p);
    case ScalarType::f32: return load<float>(p);
    case ScalarType::f64: return load<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  ScalarType type = ScalarType::f32;
  bool is_list = false;
  ScalarType count_type = ScalarType::u8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyFormat format = PlyFormat::ascii;
  std::vector<Element> elements;
  std::size_t body_offset = 0;  // byte offset just past "end_header\n"
  std::size_t body_line = 0;    // 1-based line number of the first body line
};

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Header parse_header(const std::string& bytes, const std::string& src) {
  Header h;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_format = false;
  auto fail = [&](const std::string& what) -> PlyError {
    return PlyError(src + ": " + what + " (header line " + std::to_string(line_no) + ")");
  };

  for (;;) {
    if (pos >= bytes.size()) {
      ++line_no;
      throw fail("missing end_header");
    }
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) eol = bytes.size();
    std::string line = bytes.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = std::min(eol + 1, bytes.size());
    ++line_no;

    const auto tok = split_ws(line);
    if (line_no == 1) {
      if (tok.size() != 1 || tok[0] != "ply") throw fail("not a PLY file: missing 'ply' magic");
      continue;
    }
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3) throw fail("malformed format line");
      if (tok[1] == "ascii") {
        h.format = PlyFormat::ascii;
      } else if (tok[1] == "binary_little_endian") {
        h.format = PlyFormat::binary_little_endian;
      } else {
        throw fail("unsupported format '" + tok[1] + "'");
      }
      if (tok[2] != "1.0") throw fail("unsupported version '" + tok[2] + "'");
      saw_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw fail("malformed element line");
      Element e;
      e.name = tok[1];
      std::uint64_t count = 0;
      auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), count);
      if (ec != std::errc() || p != tok[2].data() + tok[2].size()) throw fail("bad element count");
      e.count = static_cast<std::size_t>(count);
      h.elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (h.elements.empty()) throw fail("property before any element");
      Property prop;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = scalar_type(tok[2]);
        auto vt = scalar_type(tok[3]);
        if (!ct || !vt) throw fail("unknown list property type");
        prop.is_list = true;
        prop.count_type = *ct;
        prop.type = *vt;
        prop.name = tok[4];
      } else if (tok.size() == 3) {
        auto t = scalar_type(tok[1]);
        if (!t) throw fail("unknown property type '" + tok[1] + "'");
        prop.type = *t;
        prop.name = tok[2];
      } else {
        throw fail("malformed property line");
      }
      h.elements.back().properties.push_back(std::move(prop));
    } else if (tok[0] == "end_header") {
      if (!saw_format) throw fail("missing format line");
      h.body_offset = pos;
      h.body_line = line_no + 1;
      return h;
    } else {
      throw fail("unexpected keyword '" + tok[0] + "'");
    }
  }
}

struct VertexLayout {
  std::size_t element = 0;
  int xyz[3] = {-1, -1, -1};
  int rgb[3] = {-1, -1, -1};
};

VertexLayout locate_vertex(const Header& h, const std::string& src) {
  VertexLayout v;
  bool found = false;
  for (std::size_t e = 0; e < h.elements.size(); ++e) {
    if (h.elements[e].name == "vertex") {
      v.element = e;
      found = true;
      break;
    }
  }
  if (!found) throw PlyError(src + ": no vertex element");
  const auto& props = h.elements[v.element].properties;
  const char* xyz_names[3] = {"x", "y", "z"};
  const char* rgb_names[3] = {"red", "green", "blue"};
  for (int k = 0; k < 3; ++k) {
    for (std::size_t p = 0; p < props.size(); ++p) {
      if (props[p].is_list) continue;
      if (props[p].name == xyz_names[k]) v.xyz[k] = static_cast<int>(p);
      if (props[p].name == rgb_names[k]) v.rgb[k] = static_cast<int>(p);
    }
  }
  for (int k = 0; k < 3; ++k) {
    if (v.xyz[k] < 0) throw PlyError(src + ": missing geometry property '" + xyz_names[k] + "'");
  }
  for (int k = 0; k < 3; ++k) {
    if (v.rgb[k] < 0) throw PlyError(src + ": missing color property '" + rgb_names[k] + "'");
  }
  return v;
}

double color_from(double raw, ScalarType t) {
  // 8-bit channels map to [0,1]; float channels are taken as already in [0,1].
  double c = (t == ScalarType::f32 || t == ScalarType::f64) ? raw : raw / 255.0;
  return std::clamp(c, 0.0, 1.0);
}

ColoredPointCloud parse_ascii(const std::string& bytes, const Header& h, const VertexLayout& v,
                              const std::string& src) {
  ColoredPointCloud cloud;
  std::size_t pos = h.body_offset;
  std::size_t line_no = h.body_line;
  auto next_line = [&]() -> std::optional<std::string> {
    while (pos < bytes.size()) {
      std::size_t eol = bytes.find('\n', pos);
      if (eol == std::string::npos) eol = bytes.size();
      std::string line = bytes.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return line;
    }
    return std::nullopt;
  };

  for (std::size_t e = 0; e < h.elements.size(); ++e) {
    const Element& el = h.elements[e];
    for (std::size_t r = 0; r < el.count; ++r) {
      auto line = next_line();
      if (!line) {
        throw PlyError(src + ": truncated ASCII payload in element '" + el.name + "' at line " +
                       std::to_string(line_no));
      }
      if (e != v.element) continue;
      const auto tok = split_ws(*line);
      std::vector<double> values;
      std::size_t t = 0;
      for (const Property& p : el.properties) {
        auto number = [&]() -> double {
          if (t >= tok.size()) {
            throw PlyError(src + ": too few values on line " + std::to_string(line_no - 1));
          }
          const std::string& s = tok[t++];
          double d = 0.0;
          auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
          if (ec != std::errc() || end != s.data() + s.size()) {
            throw PlyError(src + ": bad number '" + s + "' on line " + std::to_string(line_no - 1));
          }
          return d;
        };
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(number());
          for (std::size_t i = 0; i < n; ++i) number();
          values.push_back(0.0);
        } else {
          values.push_back(number());
        }
      }
      Vec3 g{}, c{};
      for (int k = 0; k < 3; ++k) {
        g[k] = values[static_cast<std::size_t>(v.xyz[k])];
        c[k] = color_from(values[static_cast<std::size_t>(v.rgb[k])],
                          el.properties[static_cast<std::size_t>(v.rgb[k])].type);
      }
      cloud.geometry.push_back(g);
      cloud.color.push_back(c);
    }
    if (e == v.element) break;
  }
  return cloud;
}

ColoredPointCloud parse_binary(const std::string& bytes, const Header& h, const VertexLayout& v,
                               const std::string& src) {
  ColoredPointCloud cloud;
  std::size_t pos = h.body_offset;
  auto need = [&](std::size_t n, const std::string& where) {
    if (bytes.size() < pos || bytes.size() - pos < n) {
      throw PlyError(src + ": truncated binary payload in " + where + " at byte offset " +
                     std::to_string(pos));
    }
  };

  for (std::size_t e = 0; e < h.elements.size(); ++e) {
    const Element& el = h.elements[e];
    if (e == v.element) {
      cloud.geometry.reserve(el.count);
      cloud.color.reserve(el.count);
    }
    std::vector<double> values(el.properties.size());
    for (std::size_t r = 0; r < el.count; ++r) {
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        const Property& prop = el.properties[p];
        if (prop.is_list) {
          need(scalar_size(prop.count_type), "element '" + el.name + "'");
          const auto n = static_cast<std::size_t>(decode(prop.count_type, bytes.data() + pos));
          pos += scalar_size(prop.count_type);
          need(n * scalar_size(prop.type), "element '" + el.name + "'");
          pos += n * scalar_size(prop.type);
        } else {
          need(scalar_size(prop.type), "element '" + el.name + "'");
          values[p] = decode(prop.type, bytes.data() + pos);
          pos += scalar_size(prop.type);
        }
      }
      if (e != v.element) continue;
      Vec3 g{}, c{};
      for (int k = 0; k < 3; ++k) {
        g[k] = values[static_cast<std::size_t>(v.xyz[k])];
        c[k] = color_from(values[static_cast<std::size_t>(v.rgb[k])],
                          el.properties[static_cast<std::size_t>(v.rgb[k])].type);
      }
      cloud.geometry.push_back(g);
      cloud.color.push_back(c);
    }
    if (e == v.element) break;
  }
  return cloud;
}

std::uint8_t to_byte(double c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

void append_number(std::string& out, double d) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  out.append(buf, end);
}

}  // namespace

ColoredPointCloud parse_ply(const std::string& bytes, const std::string& source_name) {
  const Header h = parse_header(bytes, source_name);
  const VertexLayout v = locate_vertex(h, source_name);
  ColoredPointCloud cloud = h.format == PlyFormat::ascii ? parse_ascii(bytes, h, v, source_name)
                                                         : parse_binary(bytes, h, v, source_name);
  cloud.id = source_name;
  return cloud;
}

ColoredPointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open PLY file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cloud = parse_ply(ss.str(), path.string());
  cloud.id = path.stem().string();
  return cloud;
}

std::string serialize_ply(const ColoredPointCloud& cloud, const PlyWriteOptions& options) {
  if (cloud.geometry.size() != cloud.color.size()) {
    throw ValidationError("serialize_ply: geometry/color length mismatch");
  }
  const char* coord_type = options.double_precision ? "double" : "float";
  std::string out = "ply\nformat ";
  out += options.format == PlyFormat::ascii ? "ascii" : "binary_little_endian";
  out += " 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  for (const char* axis : {"x", "y", "z"}) out += std::string("property ") + coord_type + " " + axis + "\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& g = cloud.geometry[i];
    const auto& c = cloud.color[i];
    if (options.format == PlyFormat::ascii) {
      for (int k = 0; k < 3; ++k) {
        if (options.double_precision) {
          append_number(out, g[k]);
        } else {
          append_number(out, static_cast<double>(static_cast<float>(g[k])));
        }
        out += ' ';
      }
      out += std::to_string(to_byte(c[0])) + ' ' + std::to_string(to_byte(c[1])) + ' ' +
             std::to_string(to_byte(c[2])) + '\n';
    } else {
      for (int k = 0; k < 3; ++k) {
        if (options.double_precision) {
          out.append(reinterpret_cast<const char*>(&g[k]), sizeof(double));
        } else {
          const float f = static_cast<float>(g[k]);
          out.append(reinterpret_cast<const char*>(&f), sizeof(float));
        }
      }
      for (int k = 0; k < 3; ++k) out.push_back(static_cast<char>(to_byte(c[k])));
    }
  }
  return out;
}

void write_ply(const std::filesystem::path& path, const ColoredPointCloud& cloud,
               const PlyWriteOptions& options) {
  const std::string bytes = serialize_ply(cloud, options);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("write failed for '" + path.string() + "'");
}

}  // namespace mmpcqa
