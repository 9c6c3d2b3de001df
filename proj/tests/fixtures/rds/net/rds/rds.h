/* SPDX-License-Identifier: GPL-2.0 */
#ifndef _RDS_RDS_H
#define _RDS_RDS_H

#include <linux/net.h>
#include <uapi/linux/rds.h>

struct rds_sock {
	struct sock	*rs_sk;
	__u64		rs_cong_mask;
	int		rs_recverr;
	int		rs_cong_monitor;
	int		rs_nmr;
};

static inline struct rds_sock *rds_sk_to_rs(const struct sock *sk)
{
	return (struct rds_sock *)sk;
}

int rds_get_mr(struct rds_sock *rs, sockptr_t optval, int optlen);
int rds_free_mr(struct rds_sock *rs, sockptr_t optval, int optlen);

#endif
