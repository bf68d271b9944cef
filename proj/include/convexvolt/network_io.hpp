#pragma once

#include "convexvolt/grid.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace convexvolt {

/**
 * Network files come in two encodings of the same fields.
 *
 * Text (line oriented, '#' starts a comment, fields separated by blanks):
 *
 *     convexvolt-network 1
 *     buses <N>
 *     slack_voltage_sq <value>
 *     bus <id> <parent | -> <base_load_p> <base_load_q>     N records
 *     line <from> <to> <r> <x>                              N-1 records
 *
 * JSON:
 *
 *     {"format": "convexvolt-network", "version": 1, "slack_voltage_sq": 1.0,
 *      "buses": [{"id": 0, "parent": null, "p": 0.0, "q": 0.0}, ...],
 *      "lines": [{"from": 0, "to": 1, "r": 0.01, "x": 0.02}, ...]}
 *
 * All quantities are per-unit. The header must precede all records; the
 * record count must match `buses`.
 */
enum class NetworkEncoding { text, json };

RadialNetwork parse_network(std::string_view content);
RadialNetwork load_network(const std::filesystem::path& path);

std::string format_network(const RadialNetwork& net, NetworkEncoding encoding = NetworkEncoding::text);
void save_network(const RadialNetwork& net, const std::filesystem::path& path,
                  NetworkEncoding encoding = NetworkEncoding::text);

/// Reads a whole file; throws ParseError if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace convexvolt
