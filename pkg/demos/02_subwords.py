"""
Byte-pair subwords
==================

Learn merges on the bundled headline corpus, segment a sentence, and map it
back to words.
"""

from spmgen.toy import bundled_corpus
from spmgen.vocab import learn_bpe

src, tgt = bundled_corpus()
print(len(src), "pairs; first:", src[0], "->", tgt[0])

# few merges: words fall apart into pieces
small = learn_bpe(src + tgt, 40)
print("40 merges:", len(small), "tokens")
print(small.tokenize("tokyo stocks closed higher"))

# many merges: nearly every word is its own token
big = learn_bpe(src + tgt, 5000)
print("5000 merges requested,", len(big.merges), "learned,", len(big), "tokens")

# %%
# ids round-trip to whitespace-normalized text; unseen glyphs become <unk>
line = "Stocks rallied  in tokyo"
ids = small.encode(line).ids
print(ids)
print(repr(small.restore(ids)))

framed = small.frame(small.encode("stocks end higher", side="target"))
print("framed target:", [small.id_to_token[i] for i in framed.ids])
