"""Reading text through patterned envelopes: synthetic data, a small
CNN + attention recognizer built on a numpy autodiff core, lexicon
correction, and a content-aware shader countermeasure."""

__version__ = "0.1.0"
