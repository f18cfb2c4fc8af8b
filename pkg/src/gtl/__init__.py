"""Desk-scale A5/1 eavesdropping lab: cipher, rainbow tables, GSM simulator, attack."""
