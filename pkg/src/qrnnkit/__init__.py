"""qrnnkit: quasi-recurrent sequence modeling with hand-written gradients."""

from .errors import (ArgumentError, CheckpointError, ConfigError, DataError,
                     DimensionError, QrnnError, StateError, VocabularyError)
from .tensor import Rng, bernoulli_mask, matmul, sigmoid, softmax, tanh
from .qrnn import (QRNNLayer, f_pool, fo_pool, ifo_pool, masked_conv1d,
                   masked_conv1d_backward)
from .lstm import LSTMLayer
from .regularization import QRNNStack, interlayer_dropout, zoneout_gate
from .models import SequenceClassifier, SequenceLM, dump_hidden_states
from .seq2seq import (Seq2SeqModel, attend, beam_search, decode_training,
                      decoder_conv_supplemented, greedy_decode, rank_hypothesis)
from .training import (Adam, RMSprop, SGD, corpus_bleu, l2_apply, log_softmax,
                       lr_schedule, nll_loss, perplexity, rescale_gradients,
                       unigram_perplexity)
from .data import (BOS, EOS, PAD, UNK, LMBatch, Vocabulary, batch_lm,
                   build_vocab, load_embeddings, load_labeled_docs,
                   load_parallel_corpus)
from .bench import BenchResult, profile_breakdown, speed_grid, time_layer

__version__ = "0.1.0"
