#pragma once

// Durable checkpoint for a staged run. Saved atomically (tmp + rename) every
// checkpoint interval; a crash loses at most in-flight work. Byte offsets
// let resume truncate half-written output tails before continuing.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "aide/errors.hpp"

namespace aide {

struct RunState {
  std::string command;      // run | select | synthesize
  std::string config_hash;
  bool completed = false;
  std::uint64_t select_cursor = 0;      // instances with a durable decision
  std::uint64_t synthesize_cursor = 0;  // instances with a durable output record
  std::uint64_t output_offset = 0;      // durable byte length of the output manifest
  std::uint64_t decisions_offset = 0;   // durable byte length of decisions.jsonl
  std::string decisions_input;          // synthesize command: decisions file consumed
  std::string decisions_output;         // select command: non-default decisions path
  nlohmann::json aggregate = nlohmann::json::object();  // counter snapshot

  static std::filesystem::path path_in(const std::filesystem::path& run_dir) {
    return run_dir / "state.json";
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"command", command},
                          {"config_hash", config_hash},
                          {"completed", completed},
                          {"cursors",
                           {{"select", select_cursor}, {"synthesize", synthesize_cursor}}},
                          {"offsets",
                           {{"output", output_offset}, {"decisions", decisions_offset}}},
                          {"decisions_input", decisions_input},
                          {"decisions_output", decisions_output},
                          {"aggregate", aggregate}};
  }

  static RunState from_json(const nlohmann::json& j) {
    try {
      RunState s;
      s.command = j.at("command").get<std::string>();
      s.config_hash = j.at("config_hash").get<std::string>();
      s.completed = j.at("completed").get<bool>();
      s.select_cursor = j.at("cursors").at("select").get<std::uint64_t>();
      s.synthesize_cursor = j.at("cursors").at("synthesize").get<std::uint64_t>();
      s.output_offset = j.at("offsets").at("output").get<std::uint64_t>();
      s.decisions_offset = j.at("offsets").at("decisions").get<std::uint64_t>();
      s.decisions_input = j.at("decisions_input").get<std::string>();
      s.decisions_output = j.at("decisions_output").get<std::string>();
      s.aggregate = j.at("aggregate");
      if (!s.aggregate.is_object()) throw CorruptState("aggregate is not an object");
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptState(std::string("run state unreadable: ") + e.what());
    }
  }

  void save(const std::filesystem::path& run_dir) const {
    const auto path = path_in(run_dir);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write run state: " + tmp);
      const std::string body = to_json().dump(2) + "\n";
      out.write(body.data(), static_cast<std::streamsize>(body.size()));
      if (!out) throw Error("run state write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static RunState load(const std::filesystem::path& run_dir) {
    std::ifstream in(path_in(run_dir));
    if (!in) throw CorruptState("no state.json in " + run_dir.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw CorruptState("state.json is not valid JSON");
    return from_json(j);
  }
};

}  // namespace aide
