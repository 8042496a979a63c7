#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sslfuse {

// Character vocabulary: blank (0), shared sos/eos (1), space, a-z, apostrophe.
class Vocabulary {
 public:
  static Vocabulary characters();

  int blank() const { return 0; }
  int sos_eos() const { return 1; }
  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(int id) const;
  int id(char c) const;

  // Normalises (lowercase, collapsed whitespace) then maps characters to ids.
  // Throws InputError on characters outside the table.
  std::vector<int> encode(std::string_view text) const;
  // Skips blank and sos/eos.
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> symbols_;
};

// Lowercase, collapse runs of whitespace to one space, trim both ends.
std::string normalize_text(std::string_view text);

}  // namespace sslfuse
