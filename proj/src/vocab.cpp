#include "sslfuse/vocab.hpp"

#include <cctype>

#include "sslfuse/errors.hpp"

namespace sslfuse {

Vocabulary Vocabulary::characters() {
  Vocabulary v;
  v.symbols_ = {"<blank>", "<sos/eos>", " "};
  for (char c = 'a'; c <= 'z'; ++c) v.symbols_.emplace_back(1, c);
  v.symbols_.emplace_back("'");
  return v;
}

const std::string& Vocabulary::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) throw InputError("token id out of range: " + std::to_string(id));
  return symbols_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(char c) const {
  if (c == ' ') return 2;
  if (c >= 'a' && c <= 'z') return 3 + (c - 'a');
  if (c == '\'') return 29;
  throw InputError(std::string("character '") + c + "' is not in the vocabulary");
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (char c : normalize_text(text)) ids.push_back(id(c));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == blank() || id == sos_eos()) continue;
    out += symbol(id);
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace sslfuse
