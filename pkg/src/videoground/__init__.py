"""Grounded video-conversation pipeline toolkit.

Deterministic machinery for a video conversation system that grounds
its answers: spatio-temporal feature pooling and projection, content
based shot segmentation, a filtered audio transcript pipeline, phrase
to-object grounding with greedy IoU tracking, and an LLM-judge
evaluation harness. All neural models sit behind a pluggable HTTP
backend protocol with deterministic mocks, so every pipeline stage is
reproducible bit-for-bit without GPUs.
"""

__version__ = "0.1.0"
