"""
Deposits, challenges and refunds
================================

An owner deploys a model contract with a reward pool. One contributor
adds a mislabelled sample, a verifier corrects it, and the owner sides
with the verifier. An honest contributor waits out the timeout instead.
"""

from chainlearn import contract as mc
from chainlearn.cas import digest
from chainlearn.ledger import COIN, Address, Ledger, format_coins
from chainlearn.models import Perceptron, Sample, encode_dataset

owner, carol, dave, erin = (Address.from_label(n) for n in ("owner", "carol", "dave", "erin"))
ledger = Ledger.genesis([(owner, 20 * COIN), (carol, 5 * COIN), (dave, 5 * COIN), (erin, 5 * COIN)])

test = encode_dataset([Sample((1.0, 1.0), 1), Sample((-1.0, -1.0), 0)])
receipt = mc.deploy(ledger, owner, Perceptron.zeros(2), initial_data_hash=digest(b""),
                    test_digest=digest(test), initial_count=0, pool_funding=5 * COIN)
ledger.seal_block()
addr = receipt.result

mc.add_data(ledger, carol, addr, Sample((2.0, 2.0), 0))   # wrong label
mc.add_data(ledger, erin, addr, Sample((-2.0, -1.0), 0))  # fine
ledger.seal_block()

mc.verify(ledger, dave, addr, 0, Sample((2.0, 2.0), 1))
ledger.seal_block()
mc.adjudicate(ledger, owner, addr, 0, accept=True)
ledger.seal_block()

# erin has to wait for the timeout before the deposit comes back
early = mc.claim_refund(ledger, erin, addr, 1)
ledger.seal_block()
print("early claim:", early.status, early.reason)
for _ in range(10):
    ledger.seal_block()
mc.claim_refund(ledger, erin, addr, 1)
ledger.seal_block()

for e in ledger.events:
    print(e.height, e.event, e.contribution_id, format_coins(e.amount))
for name, who in (("carol", carol), ("dave", dave), ("erin", erin)):
    print(name, format_coins(ledger.balance_of(who)))
print("accuracy", mc.evaluate(ledger, addr, test))
