"""
Multi-modal re-ranking
======================

Retrieve candidates by embedding cosine, then re-order them with a
weighted mix of vector and image similarities.
"""

import numpy as np

from freshcontract.rerank import FeatureRecord, SimilaritySpec, retrieve_top_k, search

rng = np.random.default_rng(0)
scan = rng.uniform(size=(16, 16))
db = []
for i in range(40):
    # a few records share the query's image but carry noisier embeddings
    image = scan + 0.05 * rng.standard_normal(scan.shape) if i % 10 == 0 else \
        rng.uniform(size=scan.shape)
    db.append(FeatureRecord(f"case-{i:02d}", "image", rng.standard_normal(32), image))
query = FeatureRecord("query", "image", db[3].vector + 0.3 * rng.standard_normal(32), scan)

print("cosine only:", [r.id for r, _ in retrieve_top_k(query, db, 5)])

spec = SimilaritySpec((("cosine", 0.4), ("ssim", 0.6)))
for record, score in search(query, db, k=40, p=5, spec=spec):
    print(f"{record.id}  MIS {score:.3f}")
