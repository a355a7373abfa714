"""
A tiny ledger
=============

Balances are integer micro-coins. Transactions are queued, sealed into
blocks, and the whole chain can be replayed from genesis.
"""

from chainlearn.ledger import COIN, Address, Ledger, format_coins

alice, bob = Address.from_label("alice"), Address.from_label("bob")
ledger = Ledger.genesis([(alice, 10 * COIN), (bob, 2 * COIN)])

paid = ledger.transact(alice, "Transfer", {"to": bob}, 3 * COIN)
# bob cannot overspend; the receipt carries the reason and nothing moves
greedy = ledger.transact(bob, "Transfer", {"to": alice}, 50 * COIN)
print(paid.status, greedy.status, greedy.reason)

# queued receipts are applied when the block is sealed
ledger.seal_block()
print(paid.status, "at height", paid.height)

for who in (alice, bob):
    print(who[:10], format_coins(ledger.balance_of(who)))

# replaying the sealed blocks lands on the same state digest
again = Ledger.replay(ledger.genesis_accounts, ledger.blocks, ledger.blocktime, ledger.store)
print(again.state_digest() == ledger.state_digest())
