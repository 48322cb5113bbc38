"""Tabular imitation-learning lab: offline, interactive and hybrid learners with cost accounting."""
