"""
Training on planted data
========================

Generates a small rank-1 dataset, pretrains MF-BPR, then fine-tunes ConvNCF
from those embeddings and compares both against item popularity.
"""

import numpy as np

from oncf import ModelConfig, TrainConfig, evaluate, fit, init_model, leave_latest_out, pretrain_embeddings, synthesize

data = synthesize(n_users=200, n_items=300, seed=0)
ds = leave_latest_out(data, num_neg=64, seed=0)
print(ds.n_users, "users", ds.n_items, "items", ds.n_train, "training pairs")

pop = init_model(ModelConfig("itempop", K=16), ds.n_users, ds.n_items, popularity=ds.popularity)
print("ItemPop", evaluate(pop, ds)["NDCG@10"])

cfg = TrainConfig(epochs=15)
mf = init_model(ModelConfig("mf_bpr", K=16, seed=1), ds.n_users, ds.n_items)
losses, hist = fit(mf, ds, cfg, log=print)
print("MF-BPR tail NDCG@10", hist.tail_average()["NDCG@10"])

emb = pretrain_embeddings(ds, 16, cfg)
conv = init_model(ModelConfig("convncf", K=16, C=8, seed=2), ds.n_users, ds.n_items, pretrained=emb)
losses, hist = fit(conv, ds, TrainConfig(epochs=15, lambda_embedding=1.0, lambda_hidden=1.0, lambda_output=10.0))
print("ConvNCF tail NDCG@10", hist.tail_average()["NDCG@10"])
print("loss", np.round(losses, 3))
