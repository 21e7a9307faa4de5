#pragma once

#include <map>
#include <string>
#include <vector>

#include "lmab/model.hpp"

namespace lmab {

// shortest decimal form that round-trips to the identical double
std::string format_double(double v);
double parse_double(const std::string& s);

// UTF-8 key-value document: `key value...` per line, values may wrap onto
// following lines until the expected count is met; '#' starts a comment.
struct KvDocument {
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;

  bool has(const std::string& key) const;
  const std::vector<std::string>& get(const std::string& key) const;
  std::string get_one(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
};

KvDocument parse_kv_text(const std::string& text);
KvDocument load_kv_file(const std::string& path);

std::string instance_to_text(const LmabInstance& inst);
LmabInstance instance_from_text(const std::string& text);
void save_instance(const LmabInstance& inst, const std::string& path);
LmabInstance load_instance(const std::string& path);

std::string policy_to_text(const PolicyTree& tree);
PolicyTree policy_from_text(const std::string& text);
void save_policy(const PolicyTree& tree, const std::string& path);
PolicyTree load_policy(const std::string& path);

}  // namespace lmab
