"""Self-contained simulation of a small ROS graph.

Real XML-RPC registration, real length-prefixed TCPROS byte streams,
a mini master, and scripted scenarios — enough moving parts to verify
the proxy end to end on one machine, with network segmentation rendered
as distinct loopback addresses plus dial-log assertions.
"""
