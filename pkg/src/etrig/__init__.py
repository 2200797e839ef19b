"""Character-level event trigger identification: window DNN tagger, skip-gram
pretraining, Viterbi decoding, a maxent baseline and exact-match span scoring."""

__version__ = "0.1.0"
