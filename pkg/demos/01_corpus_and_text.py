"""From synthetic tweets to token ids.

Generates a small noisy code-mixed corpus, shows what normalization does to
each tweet, builds a vocabulary and encodes one tweet.
"""

from codemix.corpus import SynthConfig, generate_synthetic, serialize_conllu
from codemix.textnorm import NormConfig, tweet_text
from codemix.tokenizer import build_vocab, decode, encode

data = generate_synthetic(SynthConfig.noisy(0.5, n_per_class=3), seed=7)
print("--- CoNLL-U (first two tweets) ---")
print(serialize_conllu(list(data)[:2]))

print("--- raw -> normalized ---")
for tw in data:
    print(f"{str(tw.label):8s} {tw.text!r}\n         -> {tweet_text(tw, NormConfig())!r}")

texts = [tweet_text(tw, NormConfig()) for tw in data]
vocab = build_vocab(texts, target_size=60)
print(f"\nvocabulary: {vocab.size} entries, first words {vocab.tokens[5:15]}")

seq = encode(texts[0], vocab, max_len=24)
print("ids :", seq.ids)
print("mask:", seq.attention_mask)
print("back:", decode(seq.ids, vocab))
