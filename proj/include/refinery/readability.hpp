#pragma once

#include <string>

#include "refinery/core.hpp"

namespace refinery {

struct TextStats {
    int sentences = 0;
    int words = 0;
    int syllables = 0;
};

// Tokenization rules:
//   sentences  - maximal segments ended by '.', '!', '?' or end-of-text that
//                contain at least one word; a '.' between two digits is a
//                decimal point, not a terminator.
//   words      - whitespace-delimited tokens with at least one alphanumeric
//                character.
//   syllables  - per word: maximal vowel groups (a,e,i,o,u,y) over the word's
//                letters, minus one for a trailing 'e' not preceded by 'l',
//                minimum 1; tokens without letters (plain numbers) count 1.
// Throws Error{EmptyText} when the text contains no word.
TextStats count_stats(const std::string& text);

// 0.39 * (words/sentences) + 11.8 * (syllables/words) - 15.59, unrounded.
double fk_grade(const TextStats& stats);

double fk_grade_of_text(const std::string& text);

// Pass iff |fk(candidate) - reference_grade| <= tolerance. Fail feedback names
// the measured grade, the reference grade, and the direction of deviation.
ValidatorVerdict readability_check(const std::string& candidate_text,
                                   double reference_grade,
                                   double tolerance);

} // namespace refinery
