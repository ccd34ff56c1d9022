// Copyright 2026 The stackens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "stackens/common.hpp"
#include "stackens/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace stackens::textprep {

enum class Pos { noun, verb, adj, adv, other };

inline const char* to_string(Pos p) {
  switch (p) {
    case Pos::noun: return "NOUN";
    case Pos::verb: return "VERB";
    case Pos::adj: return "ADJ";
    case Pos::adv: return "ADV";
    case Pos::other: return "OTHER";
  }
  return "OTHER";
}

inline Pos pos_from_string(std::string_view s) {
  if (s == "NOUN") return Pos::noun;
  if (s == "VERB") return Pos::verb;
  if (s == "ADJ") return Pos::adj;
  if (s == "ADV") return Pos::adv;
  if (s == "OTHER") return Pos::other;
  throw Error("textprep", "unknown POS tag '" + std::string(s) + "'");
}

struct TaggedToken {
  std::string surface;
  Pos pos = Pos::other;

  bool operator==(const TaggedToken&) const = default;
};

using StopList = std::unordered_set<std::string>;

// Versioned defaults; identical copies live in resources/ for editing and
// for overriding from the command line.
inline constexpr std::string_view kStopwordsV1 = R"(
a
about
above
after
again
against
ain
all
am
an
and
any
are
aren't
as
at
be
because
been
before
being
below
between
both
but
by
can
couldn't
d
did
didn't
do
does
doesn't
doing
don
don't
down
during
each
few
for
from
further
had
hadn't
has
hasn't
have
haven't
having
he
her
here
hers
herself
him
himself
his
how
i
i'd
i'll
i'm
i've
if
in
into
is
isn't
it
it's
its
itself
just
ll
m
me
more
most
my
myself
no
nor
not
now
o
of
off
on
once
only
or
other
our
ours
ourselves
out
over
own
re
s
same
she
she's
should
so
some
such
t
than
that
that's
the
their
theirs
them
themselves
then
there
there's
these
they
they're
this
those
through
to
too
under
until
up
ve
very
was
wasn't
we
we're
were
weren't
what
when
where
which
while
who
whom
why
will
with
won't
would
y
you
you're
your
yours
yourself
yourselves
)";

// form <TAB> lemma <TAB> POS
inline constexpr std::string_view kLemmaLexiconV1 = R"(
am	be	VERB
is	be	VERB
are	be	VERB
was	be	VERB
were	be	VERB
been	be	VERB
being	be	VERB
has	have	VERB
had	have	VERB
having	have	VERB
does	do	VERB
did	do	VERB
done	do	VERB
doing	do	VERB
goes	go	VERB
went	go	VERB
gone	go	VERB
going	go	VERB
ate	eat	VERB
eaten	eat	VERB
began	begin	VERB
begun	begin	VERB
bought	buy	VERB
brought	bring	VERB
built	build	VERB
came	come	VERB
coming	come	VERB
caught	catch	VERB
chose	choose	VERB
chosen	choose	VERB
drew	draw	VERB
drawn	draw	VERB
drank	drink	VERB
drunk	drink	VERB
drove	drive	VERB
driven	drive	VERB
driving	drive	VERB
fell	fall	VERB
fallen	fall	VERB
felt	feel	VERB
fought	fight	VERB
found	find	VERB
flew	fly	VERB
flown	fly	VERB
forgot	forget	VERB
forgotten	forget	VERB
gave	give	VERB
given	give	VERB
giving	give	VERB
got	get	VERB
gotten	get	VERB
getting	get	VERB
grew	grow	VERB
grown	grow	VERB
heard	hear	VERB
held	hold	VERB
hid	hide	VERB
hidden	hide	VERB
kept	keep	VERB
knew	know	VERB
known	know	VERB
laid	lay	VERB
led	lead	VERB
left	leave	VERB
leaving	leave	VERB
lent	lend	VERB
lost	lose	VERB
losing	lose	VERB
made	make	VERB
making	make	VERB
meant	mean	VERB
met	meet	VERB
paid	pay	VERB
ran	run	VERB
rode	ride	VERB
ridden	ride	VERB
rang	ring	VERB
rose	rise	VERB
risen	rise	VERB
said	say	VERB
saw	see	VERB
seen	see	VERB
sold	sell	VERB
sent	send	VERB
shook	shake	VERB
shaken	shake	VERB
shot	shoot	VERB
showed	show	VERB
shown	show	VERB
sang	sing	VERB
sung	sing	VERB
sat	sit	VERB
slept	sleep	VERB
spoke	speak	VERB
spoken	speak	VERB
spent	spend	VERB
stood	stand	VERB
stole	steal	VERB
stolen	steal	VERB
struck	strike	VERB
swam	swim	VERB
took	take	VERB
taken	take	VERB
taking	take	VERB
taught	teach	VERB
tore	tear	VERB
torn	tear	VERB
told	tell	VERB
thought	think	VERB
threw	throw	VERB
thrown	throw	VERB
understood	understand	VERB
woke	wake	VERB
woken	wake	VERB
wore	wear	VERB
worn	wear	VERB
won	win	VERB
wrote	write	VERB
written	write	VERB
writing	write	VERB
broke	break	VERB
broken	break	VERB
became	become	VERB
becoming	become	VERB
bit	bite	VERB
bitten	bite	VERB
blew	blow	VERB
blown	blow	VERB
dug	dig	VERB
fed	feed	VERB
froze	freeze	VERB
frozen	freeze	VERB
hung	hang	VERB
sought	seek	VERB
shone	shine	VERB
sank	sink	VERB
slid	slide	VERB
stuck	stick	VERB
swept	sweep	VERB
wept	weep	VERB
used	use	VERB
using	use	VERB
loved	love	VERB
loving	love	VERB
hoped	hope	VERB
hoping	hope	VERB
moved	move	VERB
moving	move	VERB
saved	save	VERB
saving	save	VERB
liked	like	VERB
liking	like	VERB
arrived	arrive	VERB
arriving	arrive	VERB
closed	close	VERB
closing	close	VERB
changed	change	VERB
changing	change	VERB
charged	charge	VERB
charging	charge	VERB
created	create	VERB
creating	create	VERB
deleted	delete	VERB
deleting	delete	VERB
updated	update	VERB
updating	update	VERB
lived	live	VERB
living	live	VERB
served	serve	VERB
serving	serve	VERB
provided	provide	VERB
providing	provide	VERB
required	require	VERB
requiring	require	VERB
decided	decide	VERB
deciding	decide	VERB
improved	improve	VERB
improving	improve	VERB
included	include	VERB
including	include	VERB
received	receive	VERB
receiving	receive	VERB
continued	continue	VERB
continuing	continue	VERB
excited	excite	VERB
refused	refuse	VERB
tried	try	VERB
cried	cry	VERB
applied	apply	VERB
replied	reply	VERB
need	need	VERB
speed	speed	VERB
feed	feed	VERB
bring	bring	VERB
sing	sing	VERB
bleed	bleed	VERB
apply	apply	VERB
reply	reply	VERB
children	child	NOUN
men	man	NOUN
women	woman	NOUN
people	person	NOUN
feet	foot	NOUN
teeth	tooth	NOUN
mice	mouse	NOUN
geese	goose	NOUN
lives	life	NOUN
wives	wife	NOUN
knives	knife	NOUN
leaves	leaf	NOUN
halves	half	NOUN
shelves	shelf	NOUN
selves	self	NOUN
wolves	wolf	NOUN
analyses	analysis	NOUN
crises	crisis	NOUN
criteria	criterion	NOUN
phenomena	phenomenon	NOUN
movies	movie	NOUN
cookies	cookie	NOUN
pies	pie	NOUN
ties	tie	NOUN
lies	lie	NOUN
morning	morning	NOUN
evening	evening	NOUN
thing	thing	NOUN
something	something	NOUN
nothing	nothing	NOUN
everything	everything	NOUN
anything	anything	NOUN
ceiling	ceiling	NOUN
building	building	NOUN
wedding	wedding	NOUN
king	king	NOUN
ring	ring	NOUN
spring	spring	NOUN
string	string	NOUN
family	family	NOUN
supply	supply	NOUN
bed	bed	NOUN
hundred	hundred	NOUN
shed	shed	NOUN
seed	seed	NOUN
bus	bus	NOUN
news	news	NOUN
series	series	NOUN
species	species	NOUN
hotel	hotel	NOUN
room	room	NOUN
staff	staff	NOUN
app	app	NOUN
service	service	NOUN
bathroom	bathroom	NOUN
location	location	NOUN
experience	experience	NOUN
price	price	NOUN
money	money	NOUN
time	time	NOUN
day	day	NOUN
night	night	NOUN
stay	stay	NOUN
place	place	NOUN
desk	desk	NOUN
view	view	NOUN
trip	trip	NOUN
city	city	NOUN
window	window	NOUN
floor	floor	NOUN
breakfast	breakfast	NOUN
water	water	NOUN
better	good	ADJ
best	good	ADJ
worse	bad	ADJ
worst	bad	ADJ
bigger	big	ADJ
biggest	big	ADJ
larger	large	ADJ
largest	large	ADJ
nicer	nice	ADJ
nicest	nice	ADJ
easier	easy	ADJ
easiest	easy	ADJ
happier	happy	ADJ
happiest	happy	ADJ
friendlier	friendly	ADJ
cleaner	clean	ADJ
cleanest	clean	ADJ
faster	fast	ADJ
fastest	fast	ADJ
slower	slow	ADJ
slowest	slow	ADJ
further	far	ADJ
farther	far	ADJ
furthest	far	ADJ
good	good	ADJ
great	great	ADJ
bad	bad	ADJ
nice	nice	ADJ
clean	clean	ADJ
dirty	dirty	ADJ
friendly	friendly	ADJ
lovely	lovely	ADJ
ugly	ugly	ADJ
daily	daily	ADJ
early	early	ADJ
excellent	excellent	ADJ
terrible	terrible	ADJ
awful	awful	ADJ
amazing	amazing	ADJ
comfortable	comfortable	ADJ
helpful	helpful	ADJ
rude	rude	ADJ
small	small	ADJ
big	big	ADJ
new	new	ADJ
old	old	ADJ
quiet	quiet	ADJ
noisy	noisy	ADJ
easy	easy	ADJ
slow	slow	ADJ
fast	fast	ADJ
happy	happy	ADJ
poor	poor	ADJ
perfect	perfect	ADJ
beautiful	beautiful	ADJ
wonderful	wonderful	ADJ
horrible	horrible	ADJ
expensive	expensive	ADJ
cheap	cheap	ADJ
free	free	ADJ
red	red	ADJ
interesting	interesting	ADJ
indeed	indeed	ADV
well	well	ADV
also	also	ADV
always	always	ADV
never	never	ADV
often	often	ADV
really	really	ADV
still	still	ADV
already	already	ADV
again	again	ADV
even	even	ADV
quite	quite	ADV
almost	almost	ADV
soon	soon	ADV
later	later	ADV
yesterday	yesterday	ADV
today	today	ADV
tomorrow	tomorrow	ADV
however	however	ADV
)";

inline StopList parse_stoplist(std::string_view text) {
  StopList out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    for (char c : line)
      require(!(c >= 'A' && c <= 'Z'), "textprep", "stopword '" + line + "' is not lowercase");
    out.insert(line);
  }
  return out;
}

inline const StopList& default_stoplist() {
  static const StopList list = parse_stoplist(kStopwordsV1);
  return list;
}

struct LexiconEntry {
  std::string lemma;
  Pos pos;
};

/// Irregular forms and closed-class words: surface form -> (lemma, tag).
class Lexicon {
 public:
  Lexicon() = default;
  static Lexicon parse(std::string_view text) {
    Lexicon lx;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      require(t2 != std::string::npos, "textprep", "lexicon line " + std::to_string(n) + " needs 3 tab-separated fields");
      lx.entries_[line.substr(0, t1)] = {line.substr(t1 + 1, t2 - t1 - 1), pos_from_string(line.substr(t2 + 1))};
    }
    return lx;
  }
  const LexiconEntry* find(const std::string& form) const {
    const auto it = entries_.find(form);
    return it == entries_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, LexiconEntry> entries_;
};

inline const Lexicon& default_lexicon() {
  static const Lexicon lx = Lexicon::parse(kLemmaLexiconV1);
  return lx;
}

inline std::string read_resource(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "textprep", "cannot open resource '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CleanConfig {
  bool lowercase = true;
  bool strip_urls = true;
  bool strip_handles = true;
  bool strip_numbers = true;
  bool strip_symbols = true;
  StopList stopwords = default_stoplist();

  static CleanConfig all_off() {
    CleanConfig c;
    c.lowercase = c.strip_urls = c.strip_handles = c.strip_numbers = c.strip_symbols = false;
    c.stopwords.clear();
    return c;
  }
};

namespace detail {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_ascii_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
inline bool is_handle_char(unsigned char c) { return is_ascii_letter(c) || is_digit(c) || c == '_'; }
// Bytes >= 0x80 belong to multi-byte UTF-8 sequences and are kept as letters.
inline bool is_word_char(unsigned char c) { return is_ascii_letter(c) || c == '\'' || c >= 0x80; }

inline bool starts_with_ci(std::string_view s, std::size_t at, std::string_view prefix) {
  if (s.size() - at < prefix.size()) return false;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    char c = s[at + k];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[k]) return false;
  }
  return true;
}

inline std::string strip_urls(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const bool word_start = i == 0 || is_space(static_cast<unsigned char>(s[i - 1]));
    if (word_start && (starts_with_ci(s, i, "http://") || starts_with_ci(s, i, "https://") || starts_with_ci(s, i, "www."))) {
      while (i < s.size() && !is_space(static_cast<unsigned char>(s[i]))) ++i;
      out.push_back(' ');
      continue;
    }
    out.push_back(s[i++]);
  }
  return out;
}

inline std::string strip_handles(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '@' && i + 1 < s.size() && is_handle_char(static_cast<unsigned char>(s[i + 1]))) {
      ++i;
      while (i < s.size() && is_handle_char(static_cast<unsigned char>(s[i]))) ++i;
      out.push_back(' ');
      continue;
    }
    out.push_back(s[i++]);
  }
  return out;
}

}  // namespace detail

/// Removal order: URLs, handles, numbers, symbols, then lowercasing and
/// whitespace collapsing. Removed spans become spaces so neighbouring words
/// never fuse.
inline std::string clean(std::string_view text, const CleanConfig& cfg) {
  std::string s(text);
  if (cfg.strip_urls) s = detail::strip_urls(s);
  if (cfg.strip_handles) s = detail::strip_handles(s);
  for (char& ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (cfg.strip_numbers && detail::is_digit(c)) ch = ' ';
    else if (cfg.strip_symbols && !detail::is_word_char(c) && !detail::is_digit(c) && !detail::is_space(c)) ch = ' ';
  }
  if (cfg.lowercase)
    for (char& ch : s)
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    if (detail::is_space(static_cast<unsigned char>(ch))) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(ch);
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

/// Whitespace split of cleaned text.
inline std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string> remove_stopwords(std::span<const std::string> tokens, const StopList& stoplist) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens)
    if (!stoplist.contains(t)) out.push_back(t);
  return out;
}

namespace detail {
inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}
inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }
}  // namespace detail

/// Lexicon lookup, then the first matching suffix rule:
///   -ly -> ADV; -ing, -ed -> VERB; -ous -ful -able -ible -ive -less -ish -ic -al -> ADJ;
///   -tion -sion -ment -ness -ity -ance -ence -ship -ism -ist -er -or, plural -s -> NOUN;
///   otherwise OTHER.
inline Pos tag_word(const std::string& w, const Lexicon& lexicon = default_lexicon()) {
  using detail::ends_with;
  if (const auto* e = lexicon.find(w)) return e->pos;
  const std::size_t n = w.size();
  if (n >= 4 && ends_with(w, "ly")) return Pos::adv;
  if (n >= 5 && ends_with(w, "ing")) return Pos::verb;
  if (n >= 4 && ends_with(w, "ed")) return Pos::verb;
  for (std::string_view s : {"ous", "ful", "able", "ible", "ive", "less", "ish"})
    if (n > s.size() + 1 && ends_with(w, s)) return Pos::adj;
  if (n >= 4 && ends_with(w, "ic")) return Pos::adj;
  if (n >= 5 && ends_with(w, "al")) return Pos::adj;
  for (std::string_view s : {"tion", "sion", "ment", "ness", "ity", "ance", "ence", "ship", "ism", "ist", "er", "or"})
    if (n > s.size() + 1 && ends_with(w, s)) return Pos::noun;
  if (n >= 3 && ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is")) return Pos::noun;
  return Pos::other;
}

inline std::vector<TaggedToken> pos_tag(std::span<const std::string> tokens, const Lexicon& lexicon = default_lexicon()) {
  std::vector<TaggedToken> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back({t, tag_word(t, lexicon)});
  return out;
}

namespace detail {

// "runn" -> "run", but "fall", "miss", "buzz", "stuff" keep their double letter.
inline std::string undouble(std::string stem) {
  const std::size_t n = stem.size();
  if (n >= 3 && stem[n - 1] == stem[n - 2] && !is_vowel(stem[n - 1]) && std::string_view("lszf").find(stem[n - 1]) == std::string_view::npos)
    stem.pop_back();
  return stem;
}

inline bool sibilant_stem(std::string_view w) {
  // w ends in "es"; true when the stem ends in s, x, z, ch or sh.
  const std::string_view stem = w.substr(0, w.size() - 2);
  return ends_with(stem, "s") || ends_with(stem, "x") || ends_with(stem, "z") || ends_with(stem, "ch") || ends_with(stem, "sh");
}

inline std::string strip_plural(const std::string& w) {
  if (w.size() > 4 && ends_with(w, "ies")) return w.substr(0, w.size() - 3) + "y";
  if (w.size() > 3 && ends_with(w, "es") && sibilant_stem(w)) return w.substr(0, w.size() - 2);
  if (w.size() >= 3 && ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is"))
    return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace detail

/// Lexicon first; otherwise POS-conditioned suffix stripping. Adjectives,
/// adverbs and untagged words pass through.
inline std::string lemma_of(const TaggedToken& t, const Lexicon& lexicon = default_lexicon()) {
  using detail::ends_with;
  const std::string& w = t.surface;
  if (const auto* e = lexicon.find(w)) return e->lemma;
  switch (t.pos) {
    case Pos::verb:
      if (w.size() > 4 && ends_with(w, "ied")) return w.substr(0, w.size() - 3) + "y";
      if (w.size() >= 6 && ends_with(w, "ing")) return detail::undouble(w.substr(0, w.size() - 3));
      if (w.size() >= 5 && ends_with(w, "ed")) return detail::undouble(w.substr(0, w.size() - 2));
      return detail::strip_plural(w);
    case Pos::noun:
      return detail::strip_plural(w);
    default:
      return w;
  }
}

inline std::vector<std::string> lemmatize(std::span<const TaggedToken> tagged, const Lexicon& lexicon = default_lexicon()) {
  std::vector<std::string> out;
  out.reserve(tagged.size());
  for (const auto& t : tagged) out.push_back(lemma_of(t, lexicon));
  return out;
}

/// clean -> tokenize -> stopwords -> POS tag -> lemmatize. Stopwords are
/// removed before lemmatization.
inline std::vector<std::string> preprocess(std::string_view text, const CleanConfig& cfg,
                                           const Lexicon& lexicon = default_lexicon()) {
  const auto words = tokenize_words(clean(text, cfg));
  const auto kept = remove_stopwords(words, cfg.stopwords);
  return lemmatize(pos_tag(kept, lexicon), lexicon);
}

inline std::vector<std::string> preprocess_pipeline(const corpus::LabeledDocument& doc, const CleanConfig& cfg,
                                                    const Lexicon& lexicon = default_lexicon()) {
  return preprocess(doc.text, cfg, lexicon);
}

}  // namespace stackens::textprep
