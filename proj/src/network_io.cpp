#include "convexvolt/network_io.hpp"

#include "convexvolt/error.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace convexvolt {

namespace {

using nlohmann::json;

constexpr std::string_view kFormatTag = "convexvolt-network";
constexpr int kFormatVersion = 1;

std::vector<std::string> split_fields(const std::string& line)
{
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (in >> field) out.push_back(field);
  return out;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& what)
{
  throw ParseError("network line " + std::to_string(line_no) + ": " + what);
}

int to_int(const std::string& s, std::size_t line_no)
{
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(line_no, "expected integer, got '" + s + "'");
  return value;
}

double to_double(const std::string& s, std::size_t line_no)
{
  // from_chars for double is unavailable on older libstdc++; strtod is locale-"C" here.
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail(line_no, "expected number, got '" + s + "'");
  return value;
}

RadialNetwork parse_text(std::string_view content)
{
  std::istringstream in{std::string(content)};
  std::string raw;
  std::size_t line_no = 0;
  bool have_magic = false;
  std::optional<int> declared;
  double slack_v = 1.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;

  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const auto f = split_fields(raw);
    if (f.empty()) continue;

    if (!have_magic) {
      if (f.size() != 2 || f[0] != kFormatTag) fail(line_no, "missing 'convexvolt-network <version>' header");
      if (to_int(f[1], line_no) != kFormatVersion) fail(line_no, "unsupported network format version " + f[1]);
      have_magic = true;
    } else if (f[0] == "buses") {
      if (f.size() != 2) fail(line_no, "buses takes one value");
      declared = to_int(f[1], line_no);
      if (*declared < 1) fail(line_no, "bus count must be positive");
    } else if (f[0] == "slack_voltage_sq") {
      if (f.size() != 2) fail(line_no, "slack_voltage_sq takes one value");
      slack_v = to_double(f[1], line_no);
    } else if (f[0] == "bus") {
      if (f.size() != 5) fail(line_no, "bus record needs: id parent p q");
      Bus bus;
      bus.id = to_int(f[1], line_no);
      if (f[2] != "-") bus.parent = to_int(f[2], line_no);
      bus.base_load_p = to_double(f[3], line_no);
      bus.base_load_q = to_double(f[4], line_no);
      buses.push_back(bus);
    } else if (f[0] == "line") {
      if (f.size() != 5) fail(line_no, "line record needs: from to r x");
      lines.push_back({to_int(f[1], line_no), to_int(f[2], line_no), to_double(f[3], line_no),
                       to_double(f[4], line_no)});
    } else {
      fail(line_no, "unknown record '" + f[0] + "'");
    }
  }
  if (!have_magic) throw ParseError("empty network file");
  if (!declared) throw ParseError("network file lacks 'buses' header");
  if (static_cast<int>(buses.size()) != *declared) {
    throw ParseError("header declares " + std::to_string(*declared) + " buses, file has " +
                     std::to_string(buses.size()));
  }
  return RadialNetwork(std::move(buses), std::move(lines), slack_v);
}

RadialNetwork parse_json(std::string_view content)
{
  json doc;
  try {
    doc = json::parse(content);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("network json: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kFormatTag) throw ParseError("network json: wrong format tag");
    if (doc.at("version").get<int>() != kFormatVersion) throw ParseError("network json: unsupported version");
    std::vector<Bus> buses;
    for (const auto& b : doc.at("buses")) {
      Bus bus;
      bus.id = b.at("id").get<int>();
      if (!b.at("parent").is_null()) bus.parent = b.at("parent").get<int>();
      bus.base_load_p = b.at("p").get<double>();
      bus.base_load_q = b.at("q").get<double>();
      buses.push_back(bus);
    }
    std::vector<Line> lines;
    for (const auto& l : doc.at("lines")) {
      lines.push_back({l.at("from").get<int>(), l.at("to").get<int>(), l.at("r").get<double>(),
                       l.at("x").get<double>()});
    }
    return RadialNetwork(std::move(buses), std::move(lines), doc.value("slack_voltage_sq", 1.0));
  } catch (const json::exception& e) {
    throw ParseError(std::string("network json: ") + e.what());
  }
}

std::string fmt_double(double value)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace

RadialNetwork parse_network(std::string_view content)
{
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && content[first] == '{') return parse_json(content);
  return parse_text(content);
}

RadialNetwork load_network(const std::filesystem::path& path) { return parse_network(read_file(path)); }

std::string format_network(const RadialNetwork& net, NetworkEncoding encoding)
{
  if (encoding == NetworkEncoding::json) {
    json doc;
    doc["format"] = kFormatTag;
    doc["version"] = kFormatVersion;
    doc["slack_voltage_sq"] = net.slack_voltage_sq();
    doc["buses"] = json::array();
    for (const Bus& b : net.buses()) {
      doc["buses"].push_back({{"id", b.id},
                              {"parent", b.parent ? json(*b.parent) : json(nullptr)},
                              {"p", b.base_load_p},
                              {"q", b.base_load_q}});
    }
    doc["lines"] = json::array();
    for (const Line& l : net.lines()) {
      doc["lines"].push_back({{"from", l.from_bus}, {"to", l.to_bus}, {"r", l.r}, {"x", l.x}});
    }
    return doc.dump(2) + "\n";
  }

  std::ostringstream out;
  out << kFormatTag << ' ' << kFormatVersion << '\n';
  out << "buses " << net.bus_count() << '\n';
  out << "slack_voltage_sq " << fmt_double(net.slack_voltage_sq()) << '\n';
  for (const Bus& b : net.buses()) {
    out << "bus " << b.id << ' ' << (b.parent ? std::to_string(*b.parent) : "-") << ' ' << fmt_double(b.base_load_p)
        << ' ' << fmt_double(b.base_load_q) << '\n';
  }
  for (const Line& l : net.lines()) {
    out << "line " << l.from_bus << ' ' << l.to_bus << ' ' << fmt_double(l.r) << ' ' << fmt_double(l.x) << '\n';
  }
  return out.str();
}

void save_network(const RadialNetwork& net, const std::filesystem::path& path, NetworkEncoding encoding)
{
  write_file(path, format_network(net, encoding));
}

std::string read_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view content)
{
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace convexvolt
