#include "sslfuse/wer.hpp"

#include <algorithm>
#include <sstream>

#include "sslfuse/errors.hpp"
#include "sslfuse/vocab.hpp"

namespace sslfuse {

std::vector<std::string> split_words(std::string_view text) {
  std::istringstream in(normalize_text(text));
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

WerBreakdown wer(std::string_view reference, std::string_view hypothesis) {
  const auto ref = split_words(reference);
  const auto hyp = split_words(hypothesis);
  if (ref.empty()) throw InputError("WER reference has no words");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  WerBreakdown out;
  out.reference_words = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  out.rate = static_cast<double>(out.distance()) / static_cast<double>(n);
  return out;
}

WerBreakdown corpus_wer(const std::vector<std::pair<std::string, std::string>>& pairs) {
  WerBreakdown total;
  for (const auto& [ref, hyp] : pairs) {
    const auto w = wer(ref, hyp);
    total.substitutions += w.substitutions;
    total.deletions += w.deletions;
    total.insertions += w.insertions;
    total.reference_words += w.reference_words;
  }
  if (total.reference_words == 0) throw InputError("corpus WER over an empty reference set");
  total.rate = static_cast<double>(total.distance()) / static_cast<double>(total.reference_words);
  return total;
}

}  // namespace sslfuse
