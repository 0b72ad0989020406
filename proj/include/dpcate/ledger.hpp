//
// Copyright 2026 The dpcate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Append-only privacy-budget ledger stored as JSON lines. An entry marks a
// (budget id, scope) pair as consumed; consuming it again is refused.

#pragma once

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/nuisance.hpp"

namespace dpcate {

struct LedgerEntry {
  std::string budget_id;
  std::string scope;  // "fit" or "release"
  std::string command;
  PrivacyBudget budget;
  std::string timestamp;
};

class BudgetLedger {
 public:
  static constexpr const char* kEnvVar = "DPCATE_LEDGER";

  explicit BudgetLedger(std::string path) : path_(std::move(path)) {
    if (path_.empty()) throw ArgumentError("ledger path is empty");
  }

  static std::optional<std::string> path_from_env() {
    const char* p = std::getenv(kEnvVar);
    if (p == nullptr || *p == '\0') return std::nullopt;
    return std::string(p);
  }

  const std::string& path() const { return path_; }

  std::vector<LedgerEntry> entries() const {
    std::vector<LedgerEntry> out;
    std::ifstream in(path_);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        auto j = nlohmann::json::parse(line);
        out.push_back({j.at("budget_id").get<std::string>(), j.at("scope").get<std::string>(),
                       j.at("command").get<std::string>(), j.at("budget").get<PrivacyBudget>(),
                       j.value("timestamp", "")});
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed ledger entry: " + std::string(e.what()), lineno);
      }
    }
    return out;
  }

  bool is_consumed(const std::string& budget_id, const std::string& scope) const {
    for (const auto& e : entries())
      if (e.budget_id == budget_id && e.scope == scope) return true;
    return false;
  }

  // Records the charge, or throws BudgetRefusal when it was already made.
  void consume(const std::string& budget_id, const std::string& scope,
               const std::string& command, const PrivacyBudget& budget) {
    if (is_consumed(budget_id, scope))
      throw BudgetRefusal("budget '" + budget_id + "' already consumed for " + scope);
    nlohmann::json j = {{"budget_id", budget_id}, {"scope", scope},   {"command", command},
                        {"budget", budget},       {"timestamp", now()}};
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot open ledger '" + path_ + "' for appending");
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw Error("failed to write ledger '" + path_ + "'");
  }

 private:
  static std::string now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::string path_;
};

}  // namespace dpcate
