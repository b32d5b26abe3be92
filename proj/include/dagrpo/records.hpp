// SPDX-License-Identifier: Apache-2.0
//
// Line-delimited JSON records for prompts, rollouts and groups. Field names follow the
// domain types; see docs/formats.md.

#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "dagrpo/advantage.hpp"
#include "dagrpo/core.hpp"

namespace dagrpo {

nlohmann::json prompt_to_json(const Prompt& prompt);
Prompt prompt_from_json(const nlohmann::json& j);

nlohmann::json rollout_to_json(const Rollout& rollout);
Rollout rollout_from_json(const nlohmann::json& j);

/// {"step": s, "prompt": {...}, "rollouts": [...], "masks": {...} | null}
nlohmann::json group_to_json(const Group& group, long step);
Group group_from_json(const nlohmann::json& j);

nlohmann::json masks_to_json(const MaskSet& masks);
MaskSet masks_from_json(const nlohmann::json& j);

struct GroupRecord {
  long step = 0;
  Group group;
};

/// Reads a rollouts.jsonl dump; errors carry file:line.
std::vector<GroupRecord> read_group_records(const std::filesystem::path& path);
std::vector<Group> read_group_dump(const std::filesystem::path& path);

}  // namespace dagrpo
