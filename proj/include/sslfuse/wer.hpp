#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sslfuse {

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_words = 0;
  double rate = 0.0;

  std::size_t distance() const { return substitutions + deletions + insertions; }
};

// Word-level Levenshtein with unit costs over normalised text. On ties the
// backtrace prefers a substitution over an insertion/deletion pair.
// Throws InputError when the reference has no words.
WerBreakdown wer(std::string_view reference, std::string_view hypothesis);

// Sums edit operations over (reference, hypothesis) pairs.
WerBreakdown corpus_wer(const std::vector<std::pair<std::string, std::string>>& pairs);

std::vector<std::string> split_words(std::string_view text);

}  // namespace sslfuse
