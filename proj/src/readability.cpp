#include "refinery/readability.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace refinery {

namespace {

bool is_vowel(char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
}

bool is_word(const std::string& token) {
    for (unsigned char c : token) {
        if (std::isalnum(c)) return true;
    }
    return false;
}

int syllables_in_word(const std::string& token) {
    std::string letters;
    for (unsigned char c : token) {
        if (std::isalpha(c)) letters.push_back(static_cast<char>(std::tolower(c)));
    }
    if (letters.empty()) return 1; // number or symbol token

    int groups = 0;
    bool in_group = false;
    for (char c : letters) {
        if (is_vowel(c)) {
            if (!in_group) ++groups;
            in_group = true;
        } else {
            in_group = false;
        }
    }
    const auto n = letters.size();
    if (n >= 1 && letters[n - 1] == 'e' && (n < 2 || letters[n - 2] != 'l')) --groups;
    return groups < 1 ? 1 : groups;
}

std::string format_grade(double g) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", g);
    return buf;
}

} // namespace

TextStats count_stats(const std::string& text) {
    TextStats stats;

    { // words and syllables
        std::istringstream in(text);
        std::string token;
        while (in >> token) {
            if (!is_word(token)) continue;
            ++stats.words;
            stats.syllables += syllables_in_word(token);
        }
    }
    if (stats.words == 0) throw Error(ErrorKind::EmptyText, "no words in input text");

    { // sentences: segments with at least one word
        bool segment_has_word = false;
        bool token_has_alnum = false;
        for (std::size_t i = 0; i < text.size(); ++i) {
            const unsigned char c = static_cast<unsigned char>(text[i]);
            const bool decimal_point =
                c == '.' && i > 0 && i + 1 < text.size() &&
                std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                std::isdigit(static_cast<unsigned char>(text[i + 1]));
            if ((c == '.' || c == '!' || c == '?') && !decimal_point) {
                if (segment_has_word || token_has_alnum) ++stats.sentences;
                segment_has_word = false;
                token_has_alnum = false;
            } else if (std::isspace(c)) {
                if (token_has_alnum) segment_has_word = true;
                token_has_alnum = false;
            } else if (std::isalnum(c)) {
                token_has_alnum = true;
            }
        }
        if (segment_has_word || token_has_alnum) ++stats.sentences;
        if (stats.sentences == 0) stats.sentences = 1;
    }

    return stats;
}

double fk_grade(const TextStats& stats) {
    const double words = stats.words;
    const double sentences = stats.sentences;
    const double syllables = stats.syllables;
    return 0.39 * (words / sentences) + 11.8 * (syllables / words) - 15.59;
}

double fk_grade_of_text(const std::string& text) {
    return fk_grade(count_stats(text));
}

ValidatorVerdict readability_check(const std::string& candidate_text,
                                   double reference_grade,
                                   double tolerance) {
    if (candidate_text.empty())
        throw Error(ErrorKind::EmptyText, "candidate text is empty");
    if (tolerance < 0.0)
        throw Error(ErrorKind::Precondition, "tolerance must be >= 0");

    const double measured = fk_grade_of_text(candidate_text);
    if (std::abs(measured - reference_grade) <= tolerance)
        return ValidatorVerdict::passed(Criterion::Readability);

    std::ostringstream fb;
    fb << "measured grade " << format_grade(measured) << " is too "
       << (measured < reference_grade ? "low" : "high")
       << " versus reference grade " << format_grade(reference_grade)
       << " (tolerance " << format_grade(tolerance) << ")";
    return ValidatorVerdict::failed(Criterion::Readability, fb.str());
}

} // namespace refinery
