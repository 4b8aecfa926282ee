"""Image-quality metrics, ensembling and hallucination analysis."""
