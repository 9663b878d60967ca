"""Transparent application-layer proxy for ROS 1.

Lets nodes inside an isolated network segment (for example a container
bridge network) participate in an external ROS graph by intercepting
XMLRPC registration traffic, rewriting node endpoint addresses to an
advertised host, and relaying slave-API and TCPROS traffic through
deterministically allocated ports.
"""

__version__ = "0.1.0"
