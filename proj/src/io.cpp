#include "lmab/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lmab {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("malformed number: " + s);
  return v;
}

bool KvDocument::has(const std::string& key) const {
  for (const auto& [k, _] : entries)
    if (k == key) return true;
  return false;
}

const std::vector<std::string>& KvDocument::get(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  throw std::invalid_argument("missing key: " + key);
}

std::string KvDocument::get_one(const std::string& key) const {
  const auto& v = get(key);
  if (v.size() != 1) throw std::invalid_argument("key " + key + " expects a single value");
  return v.front();
}

std::string KvDocument::get_or(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  return get_one(key);
}

KvDocument parse_kv_text(const std::string& text) {
  KvDocument doc;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    std::vector<std::string> toks;
    while (ls >> tok) toks.push_back(tok);
    if (toks.empty()) continue;
    const bool continuation =
        !doc.entries.empty() &&
        (std::isdigit(static_cast<unsigned char>(toks.front()[0])) || toks.front()[0] == '-' ||
         toks.front()[0] == '+' || toks.front()[0] == '.');
    if (continuation) {
      auto& vals = doc.entries.back().second;
      vals.insert(vals.end(), toks.begin(), toks.end());
    } else {
      doc.entries.emplace_back(toks.front(),
                               std::vector<std::string>(toks.begin() + 1, toks.end()));
    }
  }
  return doc;
}

KvDocument load_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_kv_text(os.str());
}

std::string instance_to_text(const LmabInstance& inst) {
  std::ostringstream os;
  os << "m " << inst.num_contexts << "\n";
  os << "a " << inst.num_actions << "\n";
  os << "z " << inst.z() << "\n";
  os << "h " << inst.horizon << "\n";
  os << "reward_kind " << (inst.reward_kind == RewardKind::discrete ? "discrete" : "gaussian")
     << "\n";
  os << "weights";
  for (double w : inst.weights) os << ' ' << format_double(w);
  os << "\n";
  if (inst.reward_kind == RewardKind::discrete) {
    os << "support";
    for (double v : inst.support.values) os << ' ' << format_double(v);
    os << "\n";
    if (inst.support.value_bound != 1.0)
      os << "value_bound " << format_double(inst.support.value_bound) << "\n";
    os << "reward_probs\n";
    for (int m = 0; m < inst.num_contexts; ++m)
      for (int a = 0; a < inst.num_actions; ++a) {
        for (int zi = 0; zi < inst.z(); ++zi) {
          if (zi) os << ' ';
          os << format_double(inst.mu(m, a, zi));
        }
        os << "\n";
      }
  } else {
    os << "gaussian_means";
    for (double v : inst.gaussian_means) os << ' ' << format_double(v);
    os << "\n";
  }
  return os.str();
}

LmabInstance instance_from_text(const std::string& text) {
  const KvDocument doc = parse_kv_text(text);
  LmabInstance inst;
  inst.num_contexts = std::stoi(doc.get_one("m"));
  inst.num_actions = std::stoi(doc.get_one("a"));
  const int z = std::stoi(doc.get_one("z"));
  inst.horizon = std::stoi(doc.get_one("h"));
  const std::string kind = doc.get_or("reward_kind", "discrete");
  inst.reward_kind = kind == "gaussian" ? RewardKind::gaussian : RewardKind::discrete;
  for (const auto& tok : doc.get("weights")) inst.weights.push_back(parse_double(tok));
  if (inst.reward_kind == RewardKind::discrete) {
    if (doc.has("support")) {
      for (const auto& tok : doc.get("support")) inst.support.values.push_back(parse_double(tok));
    } else {
      inst.support = RewardSupport::bernoulli();
    }
    if (static_cast<int>(inst.support.values.size()) != z)
      throw std::invalid_argument("support length disagrees with z");
    inst.support.value_bound = parse_double(doc.get_or("value_bound", "1"));
    const auto& probs = doc.get("reward_probs");
    if (static_cast<int>(probs.size()) != inst.num_contexts * inst.num_actions * z)
      throw std::invalid_argument("reward_probs length disagrees with m*a*z");
    inst.reward_probs.reserve(probs.size());
    for (const auto& tok : probs) inst.reward_probs.push_back(parse_double(tok));
  } else {
    const auto& means = doc.get("gaussian_means");
    if (static_cast<int>(means.size()) != inst.num_contexts * inst.num_actions)
      throw std::invalid_argument("gaussian_means length disagrees with m*a");
    for (const auto& tok : means) inst.gaussian_means.push_back(parse_double(tok));
  }
  return inst;
}

void save_instance(const LmabInstance& inst, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << instance_to_text(inst);
}

LmabInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return instance_from_text(os.str());
}

std::string policy_to_text(const PolicyTree& tree) {
  std::ostringstream os;
  os << "depth " << tree.depth << "\n";
  os << "branching " << tree.branching << "\n";
  os << "nodes " << tree.nodes.size() << "\n";
  for (const auto& node : tree.nodes) {
    os << "node " << node.action;
    if (node.children.empty()) {
      os << " leaf";
    } else {
      for (int c : node.children) os << ' ' << c;
    }
    os << "\n";
  }
  return os.str();
}

PolicyTree policy_from_text(const std::string& text) {
  std::istringstream in(text);
  PolicyTree tree;
  std::string key;
  size_t node_count = 0;
  while (in >> key) {
    if (key == "depth") {
      in >> tree.depth;
    } else if (key == "branching") {
      in >> tree.branching;
    } else if (key == "nodes") {
      in >> node_count;
      tree.nodes.reserve(node_count);
    } else if (key == "node") {
      PolicyTree::Node node;
      in >> node.action;
      std::string first;
      in >> first;
      if (first != "leaf") {
        node.children.push_back(std::stoi(first));
        for (int i = 1; i < tree.branching; ++i) {
          int c;
          in >> c;
          node.children.push_back(c);
        }
      }
      tree.nodes.push_back(std::move(node));
    } else {
      throw std::invalid_argument("unknown policy token: " + key);
    }
  }
  if (tree.nodes.size() != node_count)
    throw std::invalid_argument("policy node count disagrees with header");
  return tree;
}

void save_policy(const PolicyTree& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << policy_to_text(tree);
}

PolicyTree load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return policy_from_text(os.str());
}

}  // namespace lmab
