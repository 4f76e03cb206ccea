"""nnam: recurrent neural network acoustic models, ensembles, and a bigram
phone decoder, built for desk-scale experiments on synthetic corpora."""

from .cells import (GruParams, LayerState, LstmParams, ZoneoutConfig, gru_step,
                    lstm_step, zoneout_lstm_step)
from .corpus import (Corpus, SynthSpec, SyntheticCorpus, Utterance,
                     generate_synthetic, load_corpus, split_dev)
from .decoder import (BigramLm, ClassPrior, PerCounts, PhoneHmmSet, PhoneSet,
                      brute_force_decode, estimate_bigram, estimate_priors,
                      map_phones, per, posteriors_to_scores, viterbi_decode)
from .ensemble import (Ensemble, FoldSplit, RplParams, aggregate, apply_rpl,
                       evaluate_scenarios, split_folds, train_crogging, train_rpl)
from .estimators import CroggingEnsemble, SequenceNetClassifier, check_sequences
from .network import (Normalizer, RecurrentNetwork, init_network, load_model,
                      save_model)
from .numeric import (Rng, affine, cross_entropy, finite_diff_gradient,
                      log_softmax, relu, sigmoid, softmax, tanh)
from .regularization import (DropoutSchedule, StopState, dropout_apply,
                             schedule_p, should_stop)
from .training import (Adam, SgdMomentum, StagePlan, fit_normalizer, make_batches,
                       stack_frames, train_feedforward, train_recurrent)

__version__ = "0.1.0"
