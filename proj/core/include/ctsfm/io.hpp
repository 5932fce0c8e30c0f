#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ctsfm/event_sim.hpp"

namespace ctsfm {

/// `timestamp x y polarity [track_id]` per line, timestamps with 12 decimals.
void write_events(std::ostream& out, const std::vector<EventObservation>& events);
/// Accepts 4 or 5 columns; polarity 0 reads as -1. Blank lines and `#`
/// comments are skipped. Throws kSchema with the line number on bad input.
std::vector<EventObservation> read_events(std::istream& in);

/// `timestamp tx ty tz qx qy qz qw` per line (Hamilton, normalized).
void write_trajectory(std::ostream& out, const std::vector<TrajectorySample>& samples);
std::vector<TrajectorySample> read_trajectory(std::istream& in);

/// Ordered `key = value` pairs. Blank lines and `#` comments are skipped;
/// duplicate keys are a kSchema error.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(std::istream& in);
void write_key_values(std::ostream& out, const KeyValues& kv);

/// Scenario config. Unknown keys and malformed values raise kSchema naming
/// the key.
SimScenario scenario_from_key_values(const KeyValues& kv);
KeyValues scenario_to_key_values(const SimScenario& scenario);

/// Whole-file helpers; kIo when the file cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::vector<EventObservation> load_events(const std::filesystem::path& path);
void save_events(const std::filesystem::path& path, const std::vector<EventObservation>& events);
std::vector<TrajectorySample> load_trajectory(const std::filesystem::path& path);
void save_trajectory(const std::filesystem::path& path,
                     const std::vector<TrajectorySample>& samples);
KeyValues load_key_values(const std::filesystem::path& path);

/// Typed accessors for key-value configs; kSchema naming the key on failure.
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
std::size_t kv_size(const KeyValues& kv, const std::string& key, std::size_t fallback);
std::vector<double> kv_doubles(const KeyValues& kv, const std::string& key, std::size_t count,
                               const std::vector<double>& fallback);

}  // namespace ctsfm
