"""Neural topic modeling from contextualized word embeddings.

Learns per-word and per-document topic vectors with a Wasserstein-autoencoder
style objective that matches encoded simplex vectors to a Dirichlet prior via
MMD under the information diffusion kernel.
"""

from .backbone import (BackboneConfig, CachedBackbone, ContextualEmbeddingDoc,
                       EmbeddingCache, TokenizedDoc, ToyBackbone, Vocabulary,
                       build_vocab, tokenize)
from .corpus import DocumentRecord, load_corpus, save_corpus, split_words
from .geometry import (DirichletPrior, SampleBatch, SimplexVector, idk_kernel,
                       idk_kernel_matrix, mmd_idk, sample_dirichlet,
                       sample_dirichlet_tensor)
from .model import (DocumentEmbedding, DocumentTopicVector, ImportanceWeights,
                    TopicModel, TrainConfig, WordTopicVector, batch_phi,
                    build_model, load_checkpoint, mi_loss, pool_document,
                    pool_from_alpha, rec_loss, save_checkpoint, total_loss,
                    train)
from .topics import (Topic, TopicWordMatrix, aggregate, most_frequent_words,
                     normalize_phi, top_words, topics_to_json)
from .evalsuite import (CoherenceResult, OOVSplit, PlantedCorpus,
                        ReferenceIndex, build_reference_index, classify_probe,
                        coherence_cv, diversity, inject_novel_words,
                        make_planted_corpus, npmi, oov_split)

__version__ = "0.1.0"
