/* SPDX-License-Identifier: GPL-2.0 */
#ifndef _LINUX_SOCKET_H
#define _LINUX_SOCKET_H

#define AF_UNSPEC	0
#define AF_INET		2
#define AF_RDS		21
#define PF_RDS		AF_RDS

#define SOL_SOCKET	1
#define SOL_RDS		276

#endif /* _LINUX_SOCKET_H */
