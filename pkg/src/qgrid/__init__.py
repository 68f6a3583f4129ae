"""Queryable grid-world lab: environments with an oracle, the notebook agent, PPO."""
from .env import EnvConfig, Observation, PhysicalAction, QGridEnv, StepResult, compose, horizon
from .notebook import Notebook, SimilarityConfig, notebook_init, notebook_insert, similarity, task_set
from .oracle import KnowledgeBase, answer, build_knowledge_base, good_query_set
from .query_lang import DEFAULT_VOCAB, Query, Vocabulary, parse_query, tokenize
from .tasks import SubTask, parse_task

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_VOCAB", "EnvConfig", "KnowledgeBase", "Notebook", "Observation", "PhysicalAction", "QGridEnv",
    "Query", "SimilarityConfig", "StepResult", "SubTask", "Vocabulary", "answer", "build_knowledge_base",
    "compose", "good_query_set", "horizon", "notebook_init", "notebook_insert", "parse_query", "parse_task",
    "similarity", "task_set", "tokenize",
]
